#include "maskdiff/threadpool.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace maskdiff::mt {

namespace {

std::atomic<int> g_max_threads{0};  // 0 = not set yet, use hardware count
thread_local int t_serial_depth = 0;

int hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

class Pool {
 public:
  Pool() {
    int workers = hardware_threads() - 1;
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void submit(std::function<void()> task) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      tasks_.push(std::move(task));
    }
    cv_.notify_one();
  }

  int workers() const { return static_cast<int>(threads_.size()); }

 private:
  void worker_loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [this] { return stop_ || !tasks_.empty(); });
        if (stop_ && tasks_.empty()) return;
        task = std::move(tasks_.front());
        tasks_.pop();
      }
      task();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::queue<std::function<void()>> tasks_;
  std::vector<std::thread> threads_;
  bool stop_ = false;
};

Pool& pool() {
  static Pool p;
  return p;
}

}  // namespace

int max_threads() {
  int n = g_max_threads.load(std::memory_order_relaxed);
  return n > 0 ? n : hardware_threads();
}

void set_max_threads(int n) { g_max_threads.store(std::max(1, n)); }

SerialSection::SerialSection() { ++t_serial_depth; }
SerialSection::~SerialSection() { --t_serial_depth; }

void parallel_for(int64_t n, int64_t grain,
                  const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  if (grain < 1) grain = 1;
  int threads = max_threads();
  int64_t chunks64 = std::min<int64_t>(threads, (n + grain - 1) / grain);
  int chunks = static_cast<int>(chunks64);
  if (chunks <= 1 || t_serial_depth > 0 || pool().workers() == 0) {
    fn(0, n);
    return;
  }

  std::atomic<int> remaining{chunks};
  std::mutex done_mu;
  std::condition_variable done_cv;
  int64_t per = (n + chunks - 1) / chunks;

  for (int c = 1; c < chunks; ++c) {
    int64_t begin = c * per;
    int64_t end = std::min<int64_t>(n, begin + per);
    if (begin >= end) {
      remaining.fetch_sub(1);
      continue;
    }
    pool().submit([&, begin, end] {
      ++t_serial_depth;  // no nested fan-out from worker chunks
      fn(begin, end);
      --t_serial_depth;
      if (remaining.fetch_sub(1) == 1) {
        std::lock_guard<std::mutex> lk(done_mu);
        done_cv.notify_one();
      }
    });
  }
  {
    ++t_serial_depth;
    fn(0, std::min<int64_t>(n, per));
    --t_serial_depth;
  }
  if (remaining.fetch_sub(1) != 1) {
    std::unique_lock<std::mutex> lk(done_mu);
    done_cv.wait(lk, [&] { return remaining.load() == 0; });
  }
}

}  // namespace maskdiff::mt
