#include "recon/octree_file.hpp"

#include <algorithm>
#include <cstring>

#include "recon/binary_io.hpp"

namespace recon {

namespace {

constexpr char kMagic[4] = {'O', 'C', 'T', 'R'};
constexpr std::uint32_t kVersion = 1;

void write_header(std::ostream& os, const RootFrame& frame, std::uint64_t count) {
  os.write(kMagic, 4);
  bin::put(os, kVersion);
  bin::put(os, count);
  bin::put(os, frame.center.x());
  bin::put(os, frame.center.y());
  bin::put(os, frame.center.z());
  bin::put(os, frame.r_root);
}

OctreeHeader parse_header(std::istream& is) {
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("bad OCTR magic", 0);
  const auto version = bin::get<std::uint32_t>(is, "OCTR version");
  if (version != kVersion) throw ParseError("unsupported OCTR version " + std::to_string(version), 4);
  OctreeHeader h;
  h.count = bin::get<std::uint64_t>(is, "OCTR record count");
  const double x = bin::get<double>(is, "root frame");
  const double y = bin::get<double>(is, "root frame");
  const double z = bin::get<double>(is, "root frame");
  h.frame.center = Vec3(x, y, z);
  h.frame.r_root = bin::get<double>(is, "root frame");
  if (!(h.frame.r_root > 0.0)) throw ParseError("non-positive root radius", 40);
  return h;
}

void check_size(std::istream& is, const std::filesystem::path& path, std::uint64_t count) {
  const auto here = is.tellg();
  is.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(is.tellg());
  is.seekg(here);
  const std::uint64_t expected = kOctreeHeaderBytes + count * kRecordBytes;
  if (size < expected) throw ParseError("truncated OCTR file " + path.string(), size);
}

}  // namespace

void CubeRecord::absorb(const CubeRecord& other) {
  n += other.n;
  r_sum += other.r_sum;
  for (int b = 0; b < 8; ++b) hist[b] += other.hist[b];
}

void encode_record(const CubeRecord& rec, unsigned char* out) {
  std::memset(out, 0, kRecordBytes);
  out[0] = rec.code.depth;
  bin::store(out + 4, rec.n);
  const u128 key = rec.code.key();
  for (int i = 0; i < 12; ++i) out[8 + i] = static_cast<unsigned char>(key >> (8 * (11 - i)));
  bin::store(out + 20, rec.r_sum);
  for (int b = 0; b < 8; ++b) bin::store(out + 24 + 4 * b, rec.hist[b]);
  bin::store(out + 56, rec.u);
  for (int k = 0; k < 3; ++k) bin::store(out + 60 + 4 * k, rec.v[k]);
}

CubeRecord decode_record(const unsigned char* in) {
  CubeRecord rec;
  u128 key = 0;
  for (int i = 0; i < 12; ++i) key = (key << 8) | in[8 + i];
  rec.code = MortonCode::from_key(key);
  rec.n = bin::load<std::uint32_t>(in + 4);
  rec.r_sum = bin::load<float>(in + 20);
  for (int b = 0; b < 8; ++b) rec.hist[b] = bin::load<std::uint32_t>(in + 24 + 4 * b);
  rec.u = bin::load<float>(in + 56);
  for (int k = 0; k < 3; ++k) rec.v[k] = bin::load<float>(in + 60 + 4 * k);
  return rec;
}

void sort_and_merge(std::vector<CubeRecord>& records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const CubeRecord& a, const CubeRecord& b) { return a.code < b.code; });
  std::size_t out = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (out > 0 && records[out - 1].code == records[i].code) {
      records[out - 1].absorb(records[i]);
    } else {
      records[out++] = records[i];
    }
  }
  records.resize(out);
}

void CellSource::read_range(std::uint64_t first, std::uint64_t last, std::vector<CubeRecord>& out) const {
  out.clear();
  out.reserve(last - first);
  for (std::uint64_t i = first; i < last; ++i) out.push_back(record(i));
}

std::uint64_t CellSource::locate(u128 z) const {
  RECON_REQUIRE(size() > 0, "locate on empty octree");
  std::uint64_t lo = 0;
  std::uint64_t hi = size();
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (record(mid).code.begin() <= z) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

void InMemoryOctree::read_range(std::uint64_t first, std::uint64_t last, std::vector<CubeRecord>& out) const {
  out.assign(records_.begin() + static_cast<std::ptrdiff_t>(first), records_.begin() + static_cast<std::ptrdiff_t>(last));
}

std::uint64_t InMemoryOctree::locate(u128 z) const {
  RECON_REQUIRE(!records_.empty(), "locate on empty octree");
  auto it = std::upper_bound(records_.begin(), records_.end(), z,
                             [](u128 value, const CubeRecord& r) { return value < r.code.begin(); });
  if (it == records_.begin()) return 0;
  return static_cast<std::uint64_t>(it - records_.begin()) - 1;
}

OctreeFile::OctreeFile(const std::filesystem::path& path, bool writable) : path_(path) {
  auto mode = std::ios::in | std::ios::binary;
  if (writable) mode |= std::ios::out;
  file_.open(path, mode);
  if (!file_) throw IoError("cannot open octree file " + path.string());
  const OctreeHeader h = parse_header(file_);
  frame_ = h.frame;
  count_ = h.count;
  check_size(file_, path, count_);
}

CubeRecord OctreeFile::record(std::uint64_t index) const {
  RECON_REQUIRE(index < count_, "record index out of range");
  unsigned char buf[kRecordBytes];
  file_.seekg(static_cast<std::streamoff>(kOctreeHeaderBytes + index * kRecordBytes));
  if (!file_.read(reinterpret_cast<char*>(buf), kRecordBytes)) {
    throw ParseError("truncated record in " + path_.string(), kOctreeHeaderBytes + index * kRecordBytes);
  }
  return decode_record(buf);
}

void OctreeFile::read_range(std::uint64_t first, std::uint64_t last, std::vector<CubeRecord>& out) const {
  RECON_REQUIRE(first <= last && last <= count_, "record range out of bounds");
  out.clear();
  out.reserve(last - first);
  std::vector<unsigned char> buf(kRecordBytes * std::min<std::uint64_t>(last - first, 4096));
  file_.seekg(static_cast<std::streamoff>(kOctreeHeaderBytes + first * kRecordBytes));
  for (std::uint64_t i = first; i < last;) {
    const std::uint64_t chunk = std::min<std::uint64_t>(last - i, 4096);
    if (!file_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(chunk * kRecordBytes))) {
      throw ParseError("truncated record in " + path_.string(), kOctreeHeaderBytes + i * kRecordBytes);
    }
    for (std::uint64_t j = 0; j < chunk; ++j) out.push_back(decode_record(buf.data() + j * kRecordBytes));
    i += chunk;
  }
}

void OctreeFile::write_range(std::uint64_t first, std::span<const CubeRecord> records) {
  RECON_REQUIRE(first + records.size() <= count_, "record range out of bounds");
  std::vector<unsigned char> buf(kRecordBytes * records.size());
  for (std::size_t i = 0; i < records.size(); ++i) encode_record(records[i], buf.data() + i * kRecordBytes);
  file_.seekp(static_cast<std::streamoff>(kOctreeHeaderBytes + first * kRecordBytes));
  file_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  file_.flush();
  if (!file_) throw IoError("write failed on " + path_.string());
}

OctreeHeader read_octree_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open octree file " + path.string());
  return parse_header(in);
}

OctreeWriter::OctreeWriter(const std::filesystem::path& path, const RootFrame& frame, std::size_t buffer_records)
    : path_(path), capacity_(std::max<std::size_t>(1, buffer_records)) {
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot create octree file " + path.string());
  write_header(out_, frame, 0);
  buffer_.resize(capacity_ * kRecordBytes);
  lease_.resize(static_cast<std::int64_t>(capacity_));
}

OctreeWriter::~OctreeWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

void OctreeWriter::append(const CubeRecord& rec) {
  encode_record(rec, buffer_.data() + buffered_ * kRecordBytes);
  ++count_;
  if (++buffered_ == capacity_) flush();
}

void OctreeWriter::flush() {
  out_.write(reinterpret_cast<const char*>(buffer_.data()), static_cast<std::streamsize>(buffered_ * kRecordBytes));
  buffered_ = 0;
  if (!out_) throw IoError("write failed on " + path_.string());
}

void OctreeWriter::close() {
  if (closed_) return;
  closed_ = true;
  flush();
  out_.seekp(8);
  bin::put(out_, count_);
  out_.close();
  lease_.resize(0);
  if (!out_) throw IoError("write failed on " + path_.string());
}

OctreeReader::OctreeReader(const std::filesystem::path& path, std::size_t buffer_records)
    : path_(path), capacity_(std::max<std::size_t>(1, buffer_records)) {
  in_.open(path, std::ios::binary);
  if (!in_) throw IoError("cannot open octree file " + path.string());
  const OctreeHeader h = parse_header(in_);
  frame_ = h.frame;
  count_ = h.count;
  check_size(in_, path, count_);
  lease_.resize(static_cast<std::int64_t>(std::min<std::uint64_t>(capacity_, count_)));
}

bool OctreeReader::refill() {
  buffer_.clear();
  pos_ = 0;
  const std::uint64_t remaining = count_ - next_;
  if (remaining == 0) return false;
  const std::size_t chunk = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, capacity_));
  std::vector<unsigned char> raw(chunk * kRecordBytes);
  if (!in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw ParseError("truncated record in " + path_.string(), kOctreeHeaderBytes + next_ * kRecordBytes);
  }
  buffer_.reserve(chunk);
  for (std::size_t j = 0; j < chunk; ++j) buffer_.push_back(decode_record(raw.data() + j * kRecordBytes));
  return true;
}

const CubeRecord* OctreeReader::peek() {
  if (pos_ == buffer_.size() && !refill()) return nullptr;
  return &buffer_[pos_];
}

std::optional<CubeRecord> OctreeReader::next() {
  const CubeRecord* r = peek();
  if (!r) return std::nullopt;
  CubeRecord out = *r;
  ++pos_;
  ++next_;
  return out;
}

void write_octree(const std::filesystem::path& path, const RootFrame& frame, std::span<const CubeRecord> records) {
  OctreeWriter w(path, frame, std::min<std::size_t>(4096, records.size()));
  w.append(records);
  w.close();
}

std::vector<CubeRecord> read_octree(const std::filesystem::path& path, RootFrame* frame) {
  OctreeFile f(path);
  if (frame) *frame = f.frame();
  std::vector<CubeRecord> out;
  f.read_range(0, f.size(), out);
  return out;
}

}  // namespace recon
