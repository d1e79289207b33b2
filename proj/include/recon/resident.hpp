#pragma once

#include <atomic>
#include <cstdint>

namespace recon {

/// Process-wide counters of resident octree records and depth pyramids, with
/// high-water marks. Stages hold RAII leases for whatever they keep in memory.
class ResidentTracker {
 public:
  static ResidentTracker& instance();

  void add_records(std::int64_t n);
  void add_pyramids(std::int64_t n);

  std::int64_t records() const { return records_.load(); }
  std::int64_t peak_records() const { return peak_records_.load(); }
  std::int64_t pyramids() const { return pyramids_.load(); }
  std::int64_t peak_pyramids() const { return peak_pyramids_.load(); }

  /// Resets peaks to the current values.
  void reset_peaks();

 private:
  std::atomic<std::int64_t> records_{0};
  std::atomic<std::int64_t> peak_records_{0};
  std::atomic<std::int64_t> pyramids_{0};
  std::atomic<std::int64_t> peak_pyramids_{0};
};

class RecordLease {
 public:
  explicit RecordLease(std::int64_t n = 0) { resize(n); }
  ~RecordLease() { resize(0); }
  RecordLease(const RecordLease&) = delete;
  RecordLease& operator=(const RecordLease&) = delete;

  void resize(std::int64_t n) {
    ResidentTracker::instance().add_records(n - held_);
    held_ = n;
  }
  std::int64_t held() const { return held_; }

 private:
  std::int64_t held_ = 0;
};

class PyramidLease {
 public:
  PyramidLease() { ResidentTracker::instance().add_pyramids(1); }
  ~PyramidLease() { ResidentTracker::instance().add_pyramids(-1); }
  PyramidLease(const PyramidLease&) = delete;
  PyramidLease& operator=(const PyramidLease&) = delete;
};

}  // namespace recon
