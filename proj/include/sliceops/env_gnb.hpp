#pragma once

// Discrete-time gNB with three slices sharing a pool of PRBs.
//
// Each TTI a slice receives Poisson packet arrivals, sees a Rayleigh-faded
// SNR, and is served FIFO up to the Shannon capacity of its PRB grant.
// Packets older than the slice's SLA latency are evicted and counted as
// dropped.

#include <algorithm>
#include <cctype>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sliceops {

using Rng = std::mt19937_64;

enum class ServiceClass { kUrllc, kEmbb, kMmtc };

inline std::string to_string(ServiceClass c) {
  switch (c) {
    case ServiceClass::kUrllc: return "URLLC";
    case ServiceClass::kEmbb: return "eMBB";
    case ServiceClass::kMmtc: return "mMTC";
  }
  return "?";
}

inline ServiceClass service_class_from_string(const std::string& s) {
  std::string u(s);
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char ch) { return std::toupper(ch); });
  if (u == "URLLC") return ServiceClass::kUrllc;
  if (u == "EMBB") return ServiceClass::kEmbb;
  if (u == "MMTC") return ServiceClass::kMmtc;
  throw std::invalid_argument("unknown service class '" + s + "'");
}

struct GnbConfig {
  int capacity_prb = 100;
  int alloc_step_prb = 10;
  double prb_bandwidth_hz = 180e3;
  double tti_seconds = 1e-3;
  double snr_mean_db = 25.0;
  int episode_ttis = 200;

  double tti_ms() const { return tti_seconds * 1e3; }

  void validate() const {
    if (capacity_prb <= 0) throw std::invalid_argument("capacity_prb must be > 0");
    if (alloc_step_prb <= 0) throw std::invalid_argument("alloc_step_prb must be > 0");
    if (capacity_prb % alloc_step_prb != 0)
      throw std::invalid_argument("capacity_prb must be a multiple of alloc_step_prb");
    if (!(tti_seconds > 0)) throw std::invalid_argument("tti must be > 0");
    if (!(prb_bandwidth_hz > 0)) throw std::invalid_argument("prb_bandwidth_hz must be > 0");
    if (!std::isfinite(snr_mean_db)) throw std::invalid_argument("snr_mean_db must be finite");
    if (episode_ttis <= 0) throw std::invalid_argument("episode_ttis must be > 0");
  }
};

struct SliceSpec {
  std::string slice_id;
  ServiceClass service_class = ServiceClass::kUrllc;
  double sla_latency_ms = 10.0;
  double arrival_mean_pkts_per_tti = 0.0;
  std::int64_t packet_size_bits = 5000;

  void validate() const {
    if (slice_id.empty()) throw std::invalid_argument("slice id must not be empty");
    if (!(sla_latency_ms > 0)) throw std::invalid_argument("slice " + slice_id + ": sla_latency_ms must be > 0");
    if (!(arrival_mean_pkts_per_tti >= 0) || !std::isfinite(arrival_mean_pkts_per_tti))
      throw std::invalid_argument("slice " + slice_id + ": arrival mean must be >= 0");
    if (packet_size_bits <= 0) throw std::invalid_argument("slice " + slice_id + ": packet_size_bits must be > 0");
  }
};

/// URLLC / eMBB / mMTC with SLA latencies 10 / 40 / 20 ms.
inline std::vector<SliceSpec> default_slices() {
  return {
      {"urllc", ServiceClass::kUrllc, 10.0, 4.0, 5000},
      {"embb", ServiceClass::kEmbb, 40.0, 12.0, 5000},
      {"mmtc", ServiceClass::kMmtc, 20.0, 8.0, 5000},
  };
}

inline constexpr std::size_t kFeatureCount = 5;
using Observation = std::array<double, kFeatureCount>;

inline const std::array<std::string, kFeatureCount>& feature_names() {
  static const std::array<std::string, kFeatureCount> names = {
      "snr_db_norm", "arrived_rate_norm", "served_rate_norm", "queue_bits_norm", "prev_alloc_frac"};
  return names;
}

// ---------------------------------------------------------------------------
// Sampling and link model

inline int sample_arrivals(const SliceSpec& slice, Rng& rng) {
  if (slice.arrival_mean_pkts_per_tti <= 0.0) return 0;
  std::poisson_distribution<int> dist(slice.arrival_mean_pkts_per_tti);
  return dist(rng);
}

/// Linear SNR is the configured mean times a unit-mean exponential power gain.
inline double snr_db_from_gain(const GnbConfig& config, double gain) {
  return config.snr_mean_db + 10.0 * std::log10(gain);
}

inline double sample_snr_db(const GnbConfig& config, Rng& rng) {
  std::exponential_distribution<double> gain(1.0);
  double g = gain(rng);
  // exponential_distribution may return exactly 0 for tiny uniforms
  while (g <= 0.0) g = gain(rng);
  return snr_db_from_gain(config, g);
}

inline std::int64_t capacity_bits(int n_prb, double snr_db, const GnbConfig& config) {
  if (n_prb <= 0) return 0;
  const double snr_linear = std::pow(10.0, snr_db / 10.0);
  const double bits = n_prb * config.prb_bandwidth_hz * std::log2(1.0 + snr_linear) * config.tti_seconds;
  return static_cast<std::int64_t>(std::floor(bits));
}

// ---------------------------------------------------------------------------
// Feasibility projection

struct Projection {
  std::vector<int> granted;
  bool contention = false;
};

/// Scales an over-subscribed request vector down to the cell capacity using
/// largest-remainder rounding in allocation-step units. Ties go to the
/// lowest slice index. All arithmetic is exact integer arithmetic.
inline Projection project_allocation(std::span<const int> requested, const GnbConfig& config) {
  const int step = config.alloc_step_prb;
  std::int64_t total = 0;
  for (int r : requested) {
    if (r <= 0 || r % step != 0 || r > config.capacity_prb)
      throw std::invalid_argument("requested PRBs must be a positive multiple of the allocation step and <= capacity, got " +
                                  std::to_string(r));
    total += r;
  }
  Projection out;
  out.granted.assign(requested.begin(), requested.end());
  if (total <= config.capacity_prb) return out;

  out.contention = true;
  const std::int64_t units = config.capacity_prb / step;
  const std::size_t n = requested.size();
  std::vector<std::int64_t> floor_units(n), remainder(n);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t num = static_cast<std::int64_t>(requested[i]) * units;
    floor_units[i] = num / total;
    remainder[i] = num % total;
    assigned += floor_units[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < units; ++k, ++assigned) floor_units[order[k % n]] += 1;
  for (std::size_t i = 0; i < n; ++i) out.granted[i] = static_cast<int>(floor_units[i] * step);
  return out;
}

// ---------------------------------------------------------------------------
// Queues

struct Packet {
  std::int64_t size_bits = 0;
  std::int64_t remaining_bits = 0;
  std::int64_t enqueue_tti = 0;
};

struct SliceQueue {
  std::deque<Packet> fifo;
  std::int64_t cum_arrived_bits = 0;
  std::int64_t cum_served_bits = 0;
  std::int64_t cum_dropped_bits = 0;

  std::int64_t queued_bits() const {
    std::int64_t q = 0;
    for (const auto& p : fifo) q += p.remaining_bits;
    return q;
  }
};

struct SliceStep {
  double mean_wait_ms = 0.0;
  std::int64_t arrived_bits = 0;
  std::int64_t served_bits = 0;
  std::int64_t dropped_bits = 0;
  int granted_prb = 0;
  int served_packets = 0;
  double snr_db = 0.0;
  /// enqueue TTI of each packet completed this TTI, in service order
  std::vector<std::int64_t> served_enqueue_ttis;
  std::vector<double> served_waits_ms;
};

struct StepOutcome {
  std::vector<Observation> next_observation;
  std::vector<SliceStep> slices;
  bool contention = false;
  bool done = false;
};

/// Default randomness: Poisson arrivals and exponential power fading.
struct StochasticSource {
  int arrivals(std::size_t /*slice*/, const SliceSpec& spec, Rng& rng) const { return sample_arrivals(spec, rng); }
  double snr_db(std::size_t /*slice*/, const GnbConfig& config, Rng& rng) const { return sample_snr_db(config, rng); }
};

/// The environment. `Source` supplies arrivals and SNR samples so tests can
/// substitute deterministic traffic.
template <class Source = StochasticSource>
class GnbEnv {
 public:
  GnbEnv(GnbConfig config, std::vector<SliceSpec> slices, Source source = Source{})
      : config_(std::move(config)), slices_(std::move(slices)), source_(std::move(source)) {
    config_.validate();
    if (slices_.empty()) throw std::invalid_argument("at least one slice is required");
    for (const auto& s : slices_) s.validate();
    queues_.resize(slices_.size());
    snr_db_.assign(slices_.size(), config_.snr_mean_db);
    prev_granted_.assign(slices_.size(), 0);
    rate_norm_ = static_cast<double>(capacity_bits(config_.capacity_prb, config_.snr_mean_db, config_));
    if (rate_norm_ <= 0) rate_norm_ = 1.0;
  }

  const GnbConfig& config() const { return config_; }
  const std::vector<SliceSpec>& slices() const { return slices_; }
  std::size_t slice_count() const { return slices_.size(); }
  const SliceQueue& queue(std::size_t i) const { return queues_.at(i); }
  std::int64_t tti() const { return tti_; }
  bool done() const { return tti_ >= config_.episode_ttis; }

  std::vector<Observation> reset(std::uint64_t seed) {
    rng_.seed(seed);
    tti_ = 0;
    for (auto& q : queues_) q = SliceQueue{};
    std::fill(prev_granted_.begin(), prev_granted_.end(), 0);
    for (std::size_t i = 0; i < slices_.size(); ++i) snr_db_[i] = source_.snr_db(i, config_, rng_);
    std::vector<Observation> obs(slices_.size());
    for (std::size_t i = 0; i < slices_.size(); ++i) obs[i] = observe(i, 0, 0);
    return obs;
  }

  /// Requests are projected onto the feasible set before stepping.
  StepOutcome step_requests(std::span<const int> requested) {
    Projection p = project_allocation(requested, config_);
    StepOutcome out = step(p.granted);
    out.contention = p.contention;
    return out;
  }

  StepOutcome step(std::span<const int> granted) {
    if (granted.size() != slices_.size()) throw std::invalid_argument("grant vector size must equal slice count");
    int total = 0;
    for (int g : granted) {
      if (g < 0 || g % config_.alloc_step_prb != 0)
        throw std::invalid_argument("grant must be a non-negative multiple of the allocation step");
      total += g;
    }
    if (total > config_.capacity_prb) throw std::invalid_argument("grants exceed cell capacity");

    const double tti_ms = config_.tti_ms();
    StepOutcome out;
    out.slices.resize(slices_.size());
    for (std::size_t i = 0; i < slices_.size(); ++i) {
      const SliceSpec& spec = slices_[i];
      SliceQueue& q = queues_[i];
      SliceStep& s = out.slices[i];
      s.granted_prb = granted[i];
      s.snr_db = snr_db_[i];

      // Evict packets that can no longer meet the SLA.
      while (!q.fifo.empty() && static_cast<double>(tti_ - q.fifo.front().enqueue_tti) * tti_ms > spec.sla_latency_ms) {
        s.dropped_bits += q.fifo.front().remaining_bits;
        q.fifo.pop_front();
      }

      const int n = source_.arrivals(i, spec, rng_);
      for (int k = 0; k < n; ++k) q.fifo.push_back(Packet{spec.packet_size_bits, spec.packet_size_bits, tti_});
      s.arrived_bits = static_cast<std::int64_t>(n) * spec.packet_size_bits;

      std::int64_t budget = capacity_bits(granted[i], snr_db_[i], config_);
      double wait_sum = 0.0;
      while (!q.fifo.empty() && budget > 0) {
        Packet& head = q.fifo.front();
        const std::int64_t tx = std::min(budget, head.remaining_bits);
        head.remaining_bits -= tx;
        budget -= tx;
        s.served_bits += tx;
        if (head.remaining_bits == 0) {
          const double wait = static_cast<double>(tti_ - head.enqueue_tti) * tti_ms;
          wait_sum += wait;
          s.served_waits_ms.push_back(wait);
          s.served_enqueue_ttis.push_back(head.enqueue_tti);
          ++s.served_packets;
          q.fifo.pop_front();
        }
      }
      s.mean_wait_ms = s.served_packets > 0 ? wait_sum / s.served_packets : 0.0;

      q.cum_arrived_bits += s.arrived_bits;
      q.cum_served_bits += s.served_bits;
      q.cum_dropped_bits += s.dropped_bits;
      prev_granted_[i] = granted[i];
    }

    ++tti_;
    out.done = done();
    out.next_observation.resize(slices_.size());
    for (std::size_t i = 0; i < slices_.size(); ++i) {
      snr_db_[i] = source_.snr_db(i, config_, rng_);
      out.next_observation[i] = observe(i, out.slices[i].arrived_bits, out.slices[i].served_bits);
    }
    return out;
  }

 private:
  Observation observe(std::size_t i, std::int64_t arrived, std::int64_t served) const {
    const SliceSpec& spec = slices_[i];
    double queue_norm = 10.0 * spec.arrival_mean_pkts_per_tti * static_cast<double>(spec.packet_size_bits);
    if (queue_norm <= 0) queue_norm = 10.0 * static_cast<double>(spec.packet_size_bits);
    return Observation{
        snr_db_[i] / 40.0,
        static_cast<double>(arrived) / rate_norm_,
        static_cast<double>(served) / rate_norm_,
        static_cast<double>(queues_[i].queued_bits()) / queue_norm,
        static_cast<double>(prev_granted_[i]) / config_.capacity_prb,
    };
  }

  GnbConfig config_;
  std::vector<SliceSpec> slices_;
  Source source_;
  Rng rng_{0};
  std::int64_t tti_ = 0;
  std::vector<SliceQueue> queues_;
  std::vector<double> snr_db_;
  std::vector<int> prev_granted_;
  double rate_norm_ = 1.0;
};

}  // namespace sliceops
