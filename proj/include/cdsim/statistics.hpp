#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cdsim/error.hpp"

namespace cdsim {

/// Running mean and variance of a fixed-length vector of observables
/// (Welford), plus per-batch sums for batch-means error estimates of
/// nonlinear functions of the means.
///
/// Values are added one configuration at a time, in configuration-index
/// order. Non-finite values are skipped and leave that output's count
/// unchanged. Configuration i contributes to batch i mod n_batches.
class Accumulator {
public:
    Accumulator() = default;

    explicit Accumulator(std::size_t n_outputs, std::size_t n_batches = 16)
        : count_(n_outputs, 0), mean_(n_outputs, 0.0), m2_(n_outputs, 0.0),
          batch_count_(n_batches * n_outputs, 0), batch_sum_(n_batches * n_outputs, 0.0),
          n_batches_(n_batches)
    {
        if (n_batches == 0) {
            throw InvalidArgument("Accumulator: at least one batch is required");
        }
    }

    std::size_t outputs() const noexcept { return mean_.size(); }
    std::size_t batches() const noexcept { return n_batches_; }
    /// Number of configurations added, including ones with skipped outputs.
    std::uint64_t samples() const noexcept { return samples_; }

    void add(const std::vector<double>& values)
    {
        if (values.size() != mean_.size()) {
            throw InvalidArgument("Accumulator: expected " + std::to_string(mean_.size())
                                  + " values, got " + std::to_string(values.size()));
        }
        const std::size_t batch = static_cast<std::size_t>(samples_ % n_batches_);
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double x = values[k];
            if (!std::isfinite(x)) {
                continue;
            }
            const double n = static_cast<double>(++count_[k]);
            const double delta = x - mean_[k];
            mean_[k] += delta / n;
            m2_[k] += delta * (x - mean_[k]);
            ++batch_count_[batch * outputs() + k];
            batch_sum_[batch * outputs() + k] += x;
        }
        ++samples_;
    }

    std::uint64_t count(std::size_t k) const { return count_.at(k); }
    double mean(std::size_t k) const { return count_.at(k) ? mean_[k] : std::nan(""); }

    /// Sample variance (n - 1 denominator); 0 with fewer than two samples.
    double variance(std::size_t k) const
    {
        return count_.at(k) > 1 ? m2_[k] / static_cast<double>(count_[k] - 1) : 0.0;
    }

    /// Standard error of the mean; 0 with fewer than two samples.
    double sem(std::size_t k) const
    {
        return count_.at(k) > 1 ? std::sqrt(variance(k) / static_cast<double>(count_[k])) : 0.0;
    }

    std::uint64_t batch_count(std::size_t b, std::size_t k) const
    {
        return batch_count_.at(b * outputs() + k);
    }

    double batch_mean(std::size_t b, std::size_t k) const
    {
        const auto n = batch_count(b, k);
        return n ? batch_sum_[b * outputs() + k] / static_cast<double>(n) : std::nan("");
    }

    // Raw state, for checkpoints.
    const std::vector<std::uint64_t>& raw_counts() const noexcept { return count_; }
    const std::vector<double>& raw_means() const noexcept { return mean_; }
    const std::vector<double>& raw_m2() const noexcept { return m2_; }
    const std::vector<std::uint64_t>& raw_batch_counts() const noexcept { return batch_count_; }
    const std::vector<double>& raw_batch_sums() const noexcept { return batch_sum_; }

    static Accumulator from_raw(std::uint64_t samples, std::size_t n_batches,
                                std::vector<std::uint64_t> counts, std::vector<double> means,
                                std::vector<double> m2, std::vector<std::uint64_t> batch_counts,
                                std::vector<double> batch_sums)
    {
        const std::size_t n = counts.size();
        if (means.size() != n || m2.size() != n || batch_counts.size() != n * n_batches
            || batch_sums.size() != n * n_batches || n_batches == 0) {
            throw InvalidArgument("Accumulator: inconsistent raw state");
        }
        Accumulator acc;
        acc.samples_ = samples;
        acc.n_batches_ = n_batches;
        acc.count_ = std::move(counts);
        acc.mean_ = std::move(means);
        acc.m2_ = std::move(m2);
        acc.batch_count_ = std::move(batch_counts);
        acc.batch_sum_ = std::move(batch_sums);
        return acc;
    }

private:
    std::vector<std::uint64_t> count_;
    std::vector<double> mean_;
    std::vector<double> m2_;
    std::vector<std::uint64_t> batch_count_;
    std::vector<double> batch_sum_;
    std::size_t n_batches_ = 16;
    std::uint64_t samples_ = 0;
};

/// Estimate with its standard error.
struct Estimate {
    double value = 0.0;
    double sem = 0.0;
};

/// Batch-means standard error of a scalar function g of the output means.
///
/// g is applied to every batch's means; the spread of the batch values,
/// divided by sqrt(number of usable batches), estimates the standard error of
/// g applied to the full means. Returns 0 with fewer than two usable batches.
template <class F>
double batch_sem(const Accumulator& acc, F&& g)
{
    std::vector<double> values;
    std::vector<double> means(acc.outputs());
    for (std::size_t b = 0; b < acc.batches(); ++b) {
        bool usable = true;
        for (std::size_t k = 0; k < acc.outputs(); ++k) {
            means[k] = acc.batch_mean(b, k);
        }
        for (std::size_t k = 0; k < acc.outputs() && usable; ++k) {
            usable = acc.batch_count(b, k) > 0 || acc.count(k) == 0;
        }
        if (!usable) {
            continue;
        }
        const double v = g(means);
        if (std::isfinite(v)) {
            values.push_back(v);
        }
    }
    if (values.size() < 2) {
        return 0.0;
    }
    double mean = 0.0;
    for (const double v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (const double v : values) {
        ss += (v - mean) * (v - mean);
    }
    const double n = static_cast<double>(values.size());
    return std::sqrt(ss / (n - 1.0) / n);
}

} // namespace cdsim
