#include "recon/resident.hpp"

namespace recon {

namespace {

void raise_peak(std::atomic<std::int64_t>& peak, std::int64_t value) {
  std::int64_t prev = peak.load();
  while (value > prev && !peak.compare_exchange_weak(prev, value)) {
  }
}

}  // namespace

ResidentTracker& ResidentTracker::instance() {
  static ResidentTracker tracker;
  return tracker;
}

void ResidentTracker::add_records(std::int64_t n) { raise_peak(peak_records_, records_ += n); }

void ResidentTracker::add_pyramids(std::int64_t n) { raise_peak(peak_pyramids_, pyramids_ += n); }

void ResidentTracker::reset_peaks() {
  peak_records_ = records_.load();
  peak_pyramids_ = pyramids_.load();
}

}  // namespace recon
