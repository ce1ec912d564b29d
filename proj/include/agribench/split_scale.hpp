#pragma once

// Temporal splitting, train-only MinMax scaling and sliding windows.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "agribench/error.hpp"

namespace agribench {

/// Half-open index interval [begin, end).
struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
    friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

struct TemporalSplit {
    IndexRange train;
    IndexRange val;
    IndexRange test;
};

inline constexpr std::size_t kDefaultSeqLen = 90;
inline constexpr std::size_t kDefaultHorizon = 14;

/// Split boundaries sit at floor(n f1) and floor(n (f1 + f2)); the test
/// split takes the rest.
inline TemporalSplit temporal_split(std::size_t n, std::array<double, 3> fractions = {0.8, 0.1, 0.1},
                                    std::size_t min_length = kDefaultSeqLen + kDefaultHorizon + 1) {
    for (double f : fractions)
        if (!(f >= 0.0)) throw ConfigError("temporal_split: fractions must be nonnegative");
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
        throw ConfigError("temporal_split: fractions must sum to 1");
    if (n < min_length)
        throw DataError("temporal_split: series of length " + std::to_string(n) + " is too short for one window");
    // The small nudge keeps products like 1779 * 0.8 from flooring one short.
    const auto take = [n](double f) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9)); };
    const std::size_t train_end = take(fractions[0]);
    const std::size_t val_end = std::max(train_end, take(fractions[0] + fractions[1]));
    return {{0, train_end}, {train_end, val_end}, {val_end, n}};
}

/// MinMax scaler fit on the training split only; no clamping on transform.
class Scaler {
   public:
    Scaler() = default;

    static Scaler fit(std::span<const double> train_values) {
        if (train_values.empty()) throw DataError("fit_scaler: empty training segment");
        const auto [lo, hi] = std::minmax_element(train_values.begin(), train_values.end());
        if (!(*lo < *hi)) throw DataError("fit_scaler: constant training segment");
        return Scaler(*lo, *hi);
    }

    double observed_min() const { return min_; }
    double observed_max() const { return max_; }
    double range() const { return max_ - min_; }

    double transform(double x) const { return (x - min_) / (max_ - min_); }
    double inverse(double z) const { return z * (max_ - min_) + min_; }

    std::vector<double> transform(std::span<const double> xs) const {
        std::vector<double> out(xs.size());
        std::transform(xs.begin(), xs.end(), out.begin(), [this](double x) { return transform(x); });
        return out;
    }
    std::vector<double> inverse(std::span<const double> zs) const {
        std::vector<double> out(zs.size());
        std::transform(zs.begin(), zs.end(), out.begin(), [this](double z) { return inverse(z); });
        return out;
    }

   private:
    Scaler(double lo, double hi) : min_(lo), max_(hi) {}
    double min_ = 0.0;
    double max_ = 1.0;
};

inline Scaler fit_scaler(std::span<const double> train_values) { return Scaler::fit(train_values); }

/// (input, target) pairs; inputs are row-major count x seq_len, targets count x horizon.
struct WindowSet {
    std::size_t seq_len = kDefaultSeqLen;
    std::size_t horizon = kDefaultHorizon;
    std::vector<double> inputs;
    std::vector<double> targets;
    std::vector<std::size_t> origins;  // global index of each window's first input element

    std::size_t size() const { return origins.size(); }
    bool empty() const { return origins.empty(); }
    std::span<const double> input(std::size_t i) const { return {inputs.data() + i * seq_len, seq_len}; }
    std::span<const double> target(std::size_t i) const { return {targets.data() + i * horizon, horizon}; }
    /// Global index of the first target element.
    std::size_t target_start(std::size_t i) const { return origins[i] + seq_len; }
};

/// Number of target-anchored windows for a range; the brute-force enumeration
/// in make_windows must agree with this.
inline std::size_t window_count(std::size_t range_len, std::size_t horizon, std::size_t stride) {
    if (range_len < horizon || stride == 0) return 0;
    return (range_len - horizon) / stride + 1;
}

/// Windows whose targets start at range.begin, range.begin + stride, ... and
/// stay inside the range. Inputs are the seq_len values preceding each target
/// and may reach back into earlier splits.
inline WindowSet make_windows(std::span<const double> series, IndexRange range, std::size_t seq_len = kDefaultSeqLen,
                              std::size_t horizon = kDefaultHorizon, std::size_t stride = 1) {
    if (stride == 0 || seq_len == 0 || horizon == 0) throw ConfigError("make_windows: zero length or stride");
    if (range.end > series.size() || range.begin > range.end) throw DataError("make_windows: range outside series");
    if (range.size() < horizon) throw DataError("make_windows: range shorter than horizon");
    if (range.begin < seq_len) throw DataError("make_windows: not enough history before range for one input window");
    WindowSet ws;
    ws.seq_len = seq_len;
    ws.horizon = horizon;
    for (std::size_t start = range.begin; start + horizon <= range.end; start += stride) {
        const std::size_t origin = start - seq_len;
        ws.origins.push_back(origin);
        ws.inputs.insert(ws.inputs.end(), series.begin() + origin, series.begin() + start);
        ws.targets.insert(ws.targets.end(), series.begin() + start, series.begin() + start + horizon);
    }
    return ws;
}

/// Training windows: targets anchored inside the training split with the
/// first seq_len days used only as input history.
inline WindowSet training_windows(std::span<const double> scaled, const TemporalSplit& split,
                                  std::size_t seq_len = kDefaultSeqLen, std::size_t horizon = kDefaultHorizon,
                                  std::size_t stride = 1) {
    return make_windows(scaled, {split.train.begin + seq_len, split.train.end}, seq_len, horizon, stride);
}

/// Throws if any target of the set reaches index `limit` or beyond.
inline void assert_no_leakage(const WindowSet& ws, std::size_t limit) {
    for (std::size_t i = 0; i < ws.size(); ++i)
        if (ws.origins[i] + ws.seq_len + ws.horizon > limit)
            throw DataError("window leakage: target of window " + std::to_string(i) + " crosses index " +
                            std::to_string(limit));
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
   public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
        pos_ += 8;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
        pos_ += 4;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string_view raw(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

   private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw DataError("truncated binary artifact");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Flat little-endian layout: u64 count, u64 seq_len, u64 horizon, then
/// count u64 origins, count*seq_len f64 inputs, count*horizon f64 targets.
inline std::string serialize_windows(const WindowSet& ws) {
    std::string out;
    out.reserve(24 + ws.size() * 8 + (ws.inputs.size() + ws.targets.size()) * 8);
    detail::put_u64(out, ws.size());
    detail::put_u64(out, ws.seq_len);
    detail::put_u64(out, ws.horizon);
    for (auto o : ws.origins) detail::put_u64(out, o);
    for (double v : ws.inputs) detail::put_f64(out, v);
    for (double v : ws.targets) detail::put_f64(out, v);
    return out;
}

inline WindowSet deserialize_windows(std::string_view bytes) {
    detail::ByteReader in(bytes);
    WindowSet ws;
    const std::uint64_t count = in.u64();
    ws.seq_len = in.u64();
    ws.horizon = in.u64();
    if (count > bytes.size() || ws.seq_len > bytes.size() || ws.horizon > bytes.size())
        throw DataError("window artifact header is corrupt");
    ws.origins.resize(count);
    for (auto& o : ws.origins) o = in.u64();
    ws.inputs.resize(count * ws.seq_len);
    for (auto& v : ws.inputs) v = in.f64();
    ws.targets.resize(count * ws.horizon);
    for (auto& v : ws.targets) v = in.f64();
    if (!in.done()) throw DataError("trailing bytes in window artifact");
    return ws;
}

}  // namespace agribench
