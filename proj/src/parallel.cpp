#include "ssmlab/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace ssmlab::par {
namespace {

// One parallel region. Workers hold it via shared_ptr, so a late wakeup can
// only ever claim from an exhausted region, never touch freed state.
struct Region {
  std::function<void(std::size_t)> chunk_fn;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> remaining{0};
  std::size_t total = 0;
};

class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  std::size_t size() const { return workers_.size() + 1; }

  void run(std::size_t n_chunks, std::function<void(std::size_t)> chunk_fn) {
    if (workers_.empty() || n_chunks <= 1) {
      for (std::size_t i = 0; i < n_chunks; ++i) chunk_fn(i);
      return;
    }
    auto region = std::make_shared<Region>();
    region->chunk_fn = std::move(chunk_fn);
    region->total = n_chunks;
    region->remaining.store(n_chunks, std::memory_order_relaxed);
    {
      std::lock_guard<std::mutex> lk(m_);
      current_ = region;
    }
    cv_.notify_all();
    drain(*region);  // calling thread participates
    std::unique_lock<std::mutex> lk(m_);
    done_cv_.wait(lk, [&] { return region->remaining.load(std::memory_order_acquire) == 0; });
    if (current_ == region) current_.reset();
  }

 private:
  Pool() {
    std::size_t n = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("SSMLAB_THREADS")) {
      long v = std::atol(env);
      if (v >= 1) n = static_cast<std::size_t>(v);
    }
    if (n == 0) n = 1;
    for (std::size_t i = 0; i + 1 < n; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(m_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void worker_loop() {
    for (;;) {
      std::shared_ptr<Region> region;
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return stop_ || current_ != nullptr; });
        if (stop_) return;
        region = current_;
      }
      drain(*region);
      {
        // Avoid busy-spinning on an exhausted region other threads are still
        // finishing: clear it from `current_` once fully claimed.
        std::lock_guard<std::mutex> lk(m_);
        if (current_ == region &&
            region->next.load(std::memory_order_relaxed) >= region->total)
          current_.reset();
      }
    }
  }

  void drain(Region& region) {
    for (;;) {
      const std::size_t i = region.next.fetch_add(1, std::memory_order_relaxed);
      if (i >= region.total) break;
      region.chunk_fn(i);
      if (region.remaining.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        std::lock_guard<std::mutex> lk(m_);
        done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  std::shared_ptr<Region> current_;
  bool stop_ = false;
};

}  // namespace

std::size_t thread_count() { return Pool::instance().size(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t grain) {
  if (n == 0) return;
  const std::size_t workers = Pool::instance().size();
  if (workers == 1 || n <= grain) {
    fn(0, n);
    return;
  }
  // Chunk layout depends only on n and grain, not on the worker count, so
  // per-chunk work (and any caller-side per-chunk partials) is stable.
  constexpr std::size_t kMaxChunks = 32;
  const std::size_t chunk = std::max(grain, (n + kMaxChunks - 1) / kMaxChunks);
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  Pool::instance().run(n_chunks, [&fn, n, chunk](std::size_t i) {
    const std::size_t b = i * chunk;
    fn(b, std::min(n, b + chunk));
  });
}

}  // namespace ssmlab::par
