#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace thumbnet {

// Fixed-size worker pool used by data-parallel loops. Work items are
// contiguous index ranges with disjoint writes, so results do not depend on
// scheduling order.
class ThreadPool {
 public:
  explicit ThreadPool(std::size_t threads) {
    if (threads < 1) threads = 1;
    for (std::size_t i = 0; i + 1 < threads; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  std::size_t thread_count() const { return workers_.size() + 1; }

  // Runs fn(begin, end) over [0, n) split into one contiguous chunk per
  // thread. The calling thread takes the first chunk. Rethrows the first
  // exception raised by any chunk.
  void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t parts = std::min(thread_count(), n);
    if (parts == 1) {
      fn(0, n);
      return;
    }
    const std::size_t chunk = (n + parts - 1) / parts;
    std::vector<std::exception_ptr> errors(parts);
    std::size_t pending = parts - 1;
    {
      std::lock_guard<std::mutex> lk(mu_);
      for (std::size_t p = 1; p < parts; ++p) {
        const std::size_t b = p * chunk;
        const std::size_t e = std::min(n, b + chunk);
        tasks_.push_back([&, b, e, p] {
          try {
            if (b < e) fn(b, e);
          } catch (...) {
            errors[p] = std::current_exception();
          }
          std::lock_guard<std::mutex> lk2(mu_);
          if (--pending == 0) done_cv_.notify_all();
        });
      }
    }
    cv_.notify_all();
    try {
      fn(0, std::min(n, chunk));
    } catch (...) {
      errors[0] = std::current_exception();
    }
    {
      std::unique_lock<std::mutex> lk(mu_);
      done_cv_.wait(lk, [&] { return pending == 0; });
    }
    for (auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

 private:
  void worker_loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [this] { return stop_ || !tasks_.empty(); });
        if (stop_ && tasks_.empty()) return;
        task = std::move(tasks_.back());
        tasks_.pop_back();
      }
      task();
    }
  }

  std::vector<std::thread> workers_;
  std::vector<std::function<void()>> tasks_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  bool stop_ = false;
};

namespace detail {

inline std::unique_ptr<ThreadPool>& global_pool_slot() {
  static std::unique_ptr<ThreadPool> pool = std::make_unique<ThreadPool>(1);
  return pool;
}

}  // namespace detail

// Process-wide pool. Defaults to a single thread; the CLI --threads flag
// resizes it before any work runs.
inline ThreadPool& global_pool() { return *detail::global_pool_slot(); }

inline void set_global_threads(std::size_t threads) {
  auto& slot = detail::global_pool_slot();
  if (threads < 1) threads = 1;
  if (slot->thread_count() != threads) slot = std::make_unique<ThreadPool>(threads);
}

inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  global_pool().parallel_for(n, fn);
}

}  // namespace thumbnet
