#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <cblas.h>

#include "cdsim/detail/binary.hpp"
#include "cdsim/detail/format.hpp"
#include "cdsim/error.hpp"
#include "cdsim/geometry.hpp"
#include "cdsim/rng.hpp"
#include "cdsim/statistics.hpp"

namespace cdsim {

/// Per-configuration observable evaluation. Receives the configuration and
/// its index; returns a fixed number of real values (NaN marks a value that
/// could not be evaluated for this configuration). Must be safe to call
/// concurrently.
using EnsembleTask = std::function<std::vector<double>(const AtomConfiguration&, std::uint64_t)>;

struct EnsembleJob {
    CloudSpec cloud;
    /// Canonical description of the task; part of the job fingerprint.
    std::string task_id;
    EnsembleTask task;
    std::size_t n_outputs = 0;
    std::uint64_t n_configs = 1;
    std::uint64_t master_seed = 0;
    /// Scheduling hint only; results do not depend on it.
    unsigned workers = 1;
    std::size_t n_batches = 16;
    /// The job fails when more than this fraction of configurations fail.
    double max_failure_fraction = 0.1;
    SamplingLimits limits;
    /// Called after every reduced chunk with (configurations done, target).
    std::function<void(std::uint64_t, std::uint64_t)> progress;

    void validate() const
    {
        if (n_configs < 1) {
            throw InvalidArgument("n_configs must be at least 1");
        }
        if (n_outputs == 0) {
            throw InvalidArgument("ensemble task has no outputs");
        }
        if (!task) {
            throw InvalidArgument("ensemble job has no task");
        }
        if (n_batches == 0) {
            throw InvalidArgument("n_batches must be at least 1");
        }
        cloud.validate();
    }

    /// Fingerprint of everything that determines the per-config values,
    /// excluding the target count and the scheduling hint.
    std::uint64_t fingerprint() const
    {
        std::ostringstream s;
        using detail::format_double;
        s << to_string(cloud.shape) << '|' << format_double(cloud.radius) << '|'
          << format_double(cloud.length) << '|' << format_double(cloud.density) << '|'
          << format_double(cloud.min_separation) << '|'
          << (cloud.atom_count ? std::to_string(*cloud.atom_count) : "auto") << '|' << task_id
          << '|' << n_outputs << '|' << n_batches << '|' << master_seed << '|'
          << limits.max_attempts_per_atom;
        return detail::fnv1a(s.str());
    }
};

struct ConfigFailure {
    std::uint64_t index = 0;
    std::uint64_t seed = 0;
    std::string message;
};

struct Statistics {
    std::vector<double> mean;
    std::vector<double> sem;
    /// Configurations attempted, including failed ones.
    std::uint64_t n_configs = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<ConfigFailure> failures;
    Accumulator accumulator;

    std::uint64_t n_succeeded() const { return n_configs - failures.size(); }
};

/// Incremental ensemble evaluation: configurations are processed in index
/// order chunks, evaluated concurrently, and reduced strictly in index order.
class EnsembleRunner {
public:
    explicit EnsembleRunner(EnsembleJob job)
        : job_(std::move(job)), acc_(job_.n_outputs, job_.n_batches)
    {
        job_.validate();
    }

    const EnsembleJob& job() const noexcept { return job_; }
    std::uint64_t done() const noexcept { return done_; }

    /// Processes configurations until `target` have been attempted.
    void advance(std::uint64_t target)
    {
        if (target < done_) {
            throw InvalidArgument("ensemble already has " + std::to_string(done_)
                                  + " configurations, cannot reduce to " + std::to_string(target));
        }
        // Keep BLAS single-threaded so each configuration is computed by the
        // same kernels whatever the worker count.
        openblas_set_num_threads(1);
        const unsigned workers = std::max(1u, job_.workers);
        const std::uint64_t chunk = std::max<std::uint64_t>(32, 4 * workers);
        while (done_ < target) {
            const std::uint64_t begin = done_;
            const std::uint64_t end = std::min(target, begin + chunk);
            std::vector<Slot> slots(end - begin);
            std::atomic<std::uint64_t> next{begin};
            auto work = [&] {
                for (;;) {
                    const std::uint64_t i = next.fetch_add(1);
                    if (i >= end) {
                        return;
                    }
                    evaluate(i, slots[i - begin]);
                }
            };
            if (workers == 1 || end - begin == 1) {
                work();
            } else {
                std::vector<std::jthread> pool;
                const auto n = std::min<std::uint64_t>(workers, end - begin);
                for (std::uint64_t t = 0; t < n; ++t) {
                    pool.emplace_back(work);
                }
            }
            for (std::uint64_t i = begin; i < end; ++i) {
                Slot& slot = slots[i - begin];
                if (slot.failure) {
                    failures_.push_back({i, derive_seed(job_.master_seed, i), *slot.failure});
                } else {
                    acc_.add(slot.values);
                }
            }
            done_ = end;
            if (job_.progress) {
                job_.progress(done_, target);
            }
        }
    }

    bool failed() const
    {
        return done_ > 0
            && static_cast<double>(failures_.size())
                   > job_.max_failure_fraction * static_cast<double>(done_);
    }

    Statistics statistics() const
    {
        Statistics st;
        st.n_configs = done_;
        st.failures = failures_;
        st.accumulator = acc_;
        st.seeds.reserve(done_);
        for (std::uint64_t i = 0; i < done_; ++i) {
            st.seeds.push_back(derive_seed(job_.master_seed, i));
        }
        st.mean.resize(acc_.outputs());
        st.sem.resize(acc_.outputs());
        for (std::size_t k = 0; k < acc_.outputs(); ++k) {
            st.mean[k] = acc_.mean(k);
            st.sem[k] = acc_.sem(k);
        }
        return st;
    }

    // -----------------------------------------------------------------------
    // Checkpoints
    //
    // Text header, one key=value per line, terminated by a line "data", then
    // a little-endian binary block:
    //   per output:  u64 count, f64 mean, f64 m2
    //   per batch and output: u64 count, f64 sum
    // Failures are listed in the header as "failure=<index> <message>".
    // -----------------------------------------------------------------------

    void save_checkpoint(const std::filesystem::path& path) const
    {
        const std::filesystem::path tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) {
                throw CheckpointError("cannot write checkpoint " + tmp.string());
            }
            out << "cdsim-checkpoint 1\n";
            out << "job_hash=" << job_.fingerprint() << '\n';
            out << "master_seed=" << job_.master_seed << '\n';
            out << "task=" << job_.task_id << '\n';
            out << "n_done=" << done_ << '\n';
            out << "n_outputs=" << acc_.outputs() << '\n';
            out << "n_batches=" << acc_.batches() << '\n';
            out << "samples=" << acc_.samples() << '\n';
            for (const auto& f : failures_) {
                std::string msg = f.message;
                std::replace(msg.begin(), msg.end(), '\n', ' ');
                out << "failure=" << f.index << ' ' << msg << '\n';
            }
            out << "data\n";
            for (std::size_t k = 0; k < acc_.outputs(); ++k) {
                detail::write_le64(out, acc_.raw_counts()[k]);
                detail::write_f64(out, acc_.raw_means()[k]);
                detail::write_f64(out, acc_.raw_m2()[k]);
            }
            for (std::size_t j = 0; j < acc_.raw_batch_counts().size(); ++j) {
                detail::write_le64(out, acc_.raw_batch_counts()[j]);
                detail::write_f64(out, acc_.raw_batch_sums()[j]);
            }
            if (!out) {
                throw CheckpointError("failed writing checkpoint " + tmp.string());
            }
        }
        std::filesystem::rename(tmp, path);
    }

    /// Restores a runner for `job` from a checkpoint written by a compatible
    /// job (same cloud, task, seed and output layout).
    static EnsembleRunner load_checkpoint(EnsembleJob job, const std::filesystem::path& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw CheckpointError("cannot open checkpoint " + path.string());
        }
        std::string line;
        if (!std::getline(in, line) || line != "cdsim-checkpoint 1") {
            throw CheckpointError(path.string() + ": not a checkpoint file");
        }
        std::uint64_t hash = 0, seed = 0, n_done = 0, samples = 0;
        std::size_t n_outputs = 0, n_batches = 0;
        std::vector<ConfigFailure> failures;
        bool have_data = false;
        while (std::getline(in, line)) {
            if (line == "data") {
                have_data = true;
                break;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw CheckpointError(path.string() + ": malformed header line '" + line + "'");
            }
            const std::string key = line.substr(0, eq);
            const std::string value = line.substr(eq + 1);
            try {
                if (key == "job_hash") hash = detail::parse_u64(value);
                else if (key == "master_seed") seed = detail::parse_u64(value);
                else if (key == "n_done") n_done = detail::parse_u64(value);
                else if (key == "n_outputs") n_outputs = detail::parse_u64(value);
                else if (key == "n_batches") n_batches = detail::parse_u64(value);
                else if (key == "samples") samples = detail::parse_u64(value);
                else if (key == "failure") {
                    const auto sp = value.find(' ');
                    const std::uint64_t idx = detail::parse_u64(value.substr(0, sp));
                    failures.push_back({idx, 0, sp == std::string::npos ? "" : value.substr(sp + 1)});
                }
            } catch (const InvalidArgument& e) {
                throw CheckpointError(path.string() + ": bad value for " + key + ": " + e.what());
            }
        }
        if (!have_data) {
            throw CheckpointError(path.string() + ": missing data block");
        }
        if (seed != job.master_seed) {
            throw CheckpointError("checkpoint master seed " + std::to_string(seed)
                                  + " does not match job master seed "
                                  + std::to_string(job.master_seed));
        }
        if (hash != job.fingerprint()) {
            throw CheckpointError("checkpoint was written by a different job (cloud, task or "
                                  "output layout differ)");
        }
        if (n_outputs != job.n_outputs || n_batches != job.n_batches) {
            throw CheckpointError("checkpoint output layout does not match the job");
        }
        std::vector<std::uint64_t> counts(n_outputs), bcounts(n_outputs * n_batches);
        std::vector<double> means(n_outputs), m2(n_outputs), bsums(n_outputs * n_batches);
        try {
            for (std::size_t k = 0; k < n_outputs; ++k) {
                counts[k] = detail::read_le64(in);
                means[k] = detail::read_f64(in);
                m2[k] = detail::read_f64(in);
            }
            for (std::size_t j = 0; j < bcounts.size(); ++j) {
                bcounts[j] = detail::read_le64(in);
                bsums[j] = detail::read_f64(in);
            }
        } catch (const InvalidArgument&) {
            throw CheckpointError(path.string() + ": truncated data block");
        }
        if (samples + failures.size() != n_done) {
            throw CheckpointError(path.string() + ": inconsistent configuration counts");
        }
        EnsembleRunner runner(std::move(job));
        runner.acc_ = Accumulator::from_raw(samples, n_batches, std::move(counts), std::move(means),
                                            std::move(m2), std::move(bcounts), std::move(bsums));
        for (auto& f : failures) {
            f.seed = derive_seed(runner.job_.master_seed, f.index);
        }
        runner.failures_ = std::move(failures);
        runner.done_ = n_done;
        return runner;
    }

private:
    struct Slot {
        std::vector<double> values;
        std::optional<std::string> failure;
    };

    void evaluate(std::uint64_t index, Slot& slot) const
    {
        try {
            const AtomConfiguration config =
                sample_configuration(job_.cloud, derive_seed(job_.master_seed, index), job_.limits);
            slot.values = job_.task(config, index);
            if (slot.values.size() != job_.n_outputs) {
                slot.failure = "task returned " + std::to_string(slot.values.size())
                             + " values, expected " + std::to_string(job_.n_outputs);
            }
        } catch (const std::exception& e) {
            slot.failure = e.what();
        }
    }

    EnsembleJob job_;
    Accumulator acc_;
    std::uint64_t done_ = 0;
    std::vector<ConfigFailure> failures_;
};

namespace detail {

inline Statistics finish(const EnsembleRunner& runner)
{
    Statistics st = runner.statistics();
    if (runner.failed()) {
        throw EnsembleError(std::to_string(st.failures.size()) + " of "
                            + std::to_string(st.n_configs)
                            + " configurations failed; first failure (config "
                            + std::to_string(st.failures.front().index)
                            + "): " + st.failures.front().message);
    }
    return st;
}

} // namespace detail

/// Evaluates the job's task on configurations 0 .. n_configs-1, seeded by
/// derive_seed(master_seed, i). Throws EnsembleError when more than the
/// allowed fraction of configurations fail.
inline Statistics run_ensemble(const EnsembleJob& job)
{
    EnsembleRunner runner(job);
    runner.advance(job.n_configs);
    return detail::finish(runner);
}

/// Continues a checkpointed job up to job.n_configs.
inline Statistics resume_ensemble(const EnsembleJob& job, const std::filesystem::path& checkpoint)
{
    EnsembleRunner runner = EnsembleRunner::load_checkpoint(job, checkpoint);
    runner.advance(job.n_configs);
    return detail::finish(runner);
}

} // namespace cdsim
