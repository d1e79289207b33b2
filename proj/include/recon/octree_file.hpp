#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <vector>

#include "recon/morton.hpp"
#include "recon/resident.hpp"

namespace recon {

/// One octree cell as stored in linear octree files.
struct CubeRecord {
  MortonCode code;
  std::uint32_t n = 0;        // contributing samples
  float r_sum = 0.0f;         // sum of contributing sample radii
  std::array<std::uint32_t, 8> hist{};
  float u = 0.0f;
  std::array<float, 3> v{};

  /// Mean sample radius, or the cell half-edge for cells without samples.
  double density(const RootFrame& frame) const {
    return n > 0 ? double(r_sum) / n : frame.half_edge(code.depth);
  }
  /// Dedup merge: sums counts, radii and bins.
  void absorb(const CubeRecord& other);

  friend bool operator==(const CubeRecord&, const CubeRecord&) = default;
};

inline constexpr std::size_t kRecordBytes = 72;
inline constexpr std::size_t kOctreeHeaderBytes = 48;

void encode_record(const CubeRecord& rec, unsigned char* out);
CubeRecord decode_record(const unsigned char* in);

/// Sorts by code and merges equal codes in input order.
void sort_and_merge(std::vector<CubeRecord>& records);

/// Random-access, read-only view of cells in Z-order.
class CellSource {
 public:
  virtual ~CellSource() = default;
  virtual const RootFrame& frame() const = 0;
  virtual std::uint64_t size() const = 0;
  virtual CubeRecord record(std::uint64_t index) const = 0;
  virtual void read_range(std::uint64_t first, std::uint64_t last, std::vector<CubeRecord>& out) const;
  /// Index of the last record whose code begins at or before `z`. For a
  /// complete octree that is the leaf containing finest cell `z`.
  virtual std::uint64_t locate(u128 z) const;
};

class InMemoryOctree final : public CellSource {
 public:
  InMemoryOctree(RootFrame frame, std::vector<CubeRecord> records)
      : frame_(frame), records_(std::move(records)) {}

  const RootFrame& frame() const override { return frame_; }
  std::uint64_t size() const override { return records_.size(); }
  CubeRecord record(std::uint64_t index) const override { return records_[index]; }
  void read_range(std::uint64_t first, std::uint64_t last, std::vector<CubeRecord>& out) const override;
  std::uint64_t locate(u128 z) const override;

  std::vector<CubeRecord>& records() { return records_; }
  const std::vector<CubeRecord>& records() const { return records_; }

 private:
  RootFrame frame_;
  std::vector<CubeRecord> records_;
};

/// Random-access OCTR file. Opened read-only unless `writable`.
class OctreeFile final : public CellSource {
 public:
  explicit OctreeFile(const std::filesystem::path& path, bool writable = false);

  const RootFrame& frame() const override { return frame_; }
  std::uint64_t size() const override { return count_; }
  CubeRecord record(std::uint64_t index) const override;
  void read_range(std::uint64_t first, std::uint64_t last, std::vector<CubeRecord>& out) const override;
  void write_range(std::uint64_t first, std::span<const CubeRecord> records);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::fstream file_;
  RootFrame frame_;
  std::uint64_t count_ = 0;
};

struct OctreeHeader {
  RootFrame frame;
  std::uint64_t count = 0;
};

OctreeHeader read_octree_header(const std::filesystem::path& path);

/// Sequential OCTR writer. The record count is patched on close().
class OctreeWriter {
 public:
  OctreeWriter(const std::filesystem::path& path, const RootFrame& frame, std::size_t buffer_records = 4096);
  ~OctreeWriter();
  OctreeWriter(const OctreeWriter&) = delete;
  OctreeWriter& operator=(const OctreeWriter&) = delete;

  void append(const CubeRecord& rec);
  void append(std::span<const CubeRecord> recs) {
    for (const auto& r : recs) append(r);
  }
  std::uint64_t written() const { return count_; }
  void close();

 private:
  void flush();

  std::filesystem::path path_;
  std::ofstream out_;
  std::vector<unsigned char> buffer_;
  std::size_t capacity_;
  std::size_t buffered_ = 0;
  std::uint64_t count_ = 0;
  bool closed_ = false;
  RecordLease lease_;
};

/// Sequential buffered OCTR reader.
class OctreeReader {
 public:
  explicit OctreeReader(const std::filesystem::path& path, std::size_t buffer_records = 4096);

  const RootFrame& frame() const { return frame_; }
  std::uint64_t size() const { return count_; }
  std::uint64_t position() const { return next_; }
  std::optional<CubeRecord> next();
  const CubeRecord* peek();

 private:
  bool refill();

  std::filesystem::path path_;
  std::ifstream in_;
  RootFrame frame_;
  std::uint64_t count_ = 0;
  std::uint64_t next_ = 0;
  std::vector<CubeRecord> buffer_;
  std::size_t capacity_;
  std::size_t pos_ = 0;
  RecordLease lease_;
};

/// Writes a whole sorted record vector as an OCTR file.
void write_octree(const std::filesystem::path& path, const RootFrame& frame, std::span<const CubeRecord> records);
std::vector<CubeRecord> read_octree(const std::filesystem::path& path, RootFrame* frame = nullptr);

}  // namespace recon
