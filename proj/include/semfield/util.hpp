#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace semfield {

// Reserved label value for unlabeled pixels. Excluded from loss and metrics.
inline constexpr int kVoidLabel = 255;

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto stable exit codes.

/// Bad arguments passed to an operation (shape mismatch, out-of-range pixel, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration or scene specification.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or undecodable dataset content.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed serialized artifact (checkpoint, PNG).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Metric requested on an empty accumulator.
class UndefinedMetric : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value encountered during training; carries the offending ray slot.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, long ray_index)
      : std::runtime_error(what + " (ray " + std::to_string(ray_index) + ")"),
        ray_index(ray_index) {}
  long ray_index;
};

// ---------------------------------------------------------------------------
// Counter-based RNG. Hand-rolled so streams are bit-stable across standard
// library implementations; every consumer derives an independent stream from
// (seed, purpose, counters) and never shares mutable state across threads.

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_u64(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ (mix64(b) + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

inline std::uint64_t hash_u64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return hash_u64(hash_u64(a, b), c);
}

inline std::uint64_t hash_u64(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                              std::uint64_t d) {
  return hash_u64(hash_u64(a, b, c), d);
}

// Stream purposes; part of the reproducibility contract for a given binary.
enum RngTag : std::uint64_t {
  kRngInitField = 1,
  kRngBatchPixels = 2,
  kRngStratified = 3,
  kRngImportance = 4,
  kRngDensityNoiseCoarse = 5,
  kRngDensityNoiseFine = 6,
};

class TinyRng {
 public:
  explicit TinyRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix64_step();
  }

  /// Uniform double in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform float in [0, 1).
  float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

 private:
  std::uint64_t mix64_step() {
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Fixed-partition worker pool. Work items are indexed; callers that need
// reproducible reductions store per-item results and combine them in index
// order, which keeps results independent of thread count and scheduling.

class ThreadPool {
 public:
  explicit ThreadPool(int threads = 0) {
    int n = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    for (int i = 0; i < n - 1; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_work_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  /// Runs fn(0..count-1) across the pool and the calling thread; blocks until
  /// all items finish. The first exception thrown by an item is rethrown.
  void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    if (workers_.empty() || count == 1) {
      for (std::size_t i = 0; i < count; ++i) fn(i);
      return;
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      job_ = &fn;
      total_ = count;
      next_.store(0, std::memory_order_relaxed);
      done_.store(0, std::memory_order_relaxed);
      error_ = nullptr;
      ++generation_;
    }
    cv_work_.notify_all();
    run_items(fn);
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_done_.wait(lock, [this] { return done_.load(std::memory_order_acquire) == total_; });
      job_ = nullptr;
      if (error_) {
        auto err = error_;
        error_ = nullptr;
        std::rethrow_exception(err);
      }
    }
  }

 private:
  void run_items(const std::function<void(std::size_t)>& fn) {
    while (true) {
      std::size_t i = next_.fetch_add(1, std::memory_order_relaxed);
      if (i >= total_) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu_);
        if (!error_) error_ = std::current_exception();
      }
      if (done_.fetch_add(1, std::memory_order_acq_rel) + 1 == total_) {
        std::lock_guard<std::mutex> lock(mu_);
        cv_done_.notify_all();
      }
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    while (true) {
      const std::function<void(std::size_t)>* job = nullptr;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_work_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        job = job_;
      }
      if (job) run_items(*job);
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_work_, cv_done_;
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t total_ = 0;
  std::atomic<std::size_t> next_{0}, done_{0};
  std::exception_ptr error_;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace semfield
