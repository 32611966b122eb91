#pragma once

#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace krn {

/// Fixed set of workers that run one task per thread and then park.
/// Task 0 runs on the calling thread.
class ThreadPool {
 public:
  explicit ThreadPool(int threads);
  ~ThreadPool();
  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int size() const { return size_; }

  /// Calls task(t) for every t in [0, size()) and waits for all of them.
  /// The first exception thrown by any task is rethrown here.
  void run(const std::function<void(int)>& task);

  /// Splits [0, n) into size() contiguous chunks, chunk t going to task t.
  static std::pair<std::int64_t, std::int64_t> chunk(std::int64_t n, int t, int parts) {
    return {n * t / parts, n * (t + 1) / parts};
  }

 private:
  void worker(int id);

  int size_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* task_ = nullptr;
  std::uint64_t generation_ = 0;
  int pending_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

}  // namespace krn
