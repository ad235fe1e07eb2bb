#include "orbitsplat/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace osp {
namespace {

constexpr int kMaxShards = 16;

// Generation-tagged pool. Workers capture the job pointer under the mutex and
// only while it is set, and run() waits for every capturing worker to retire
// before it returns, so the job reference never outlives a run() call.
class WorkerPool {
public:
    explicit WorkerPool(int workers) {
        for (int i = 0; i < workers; ++i)
            threads_.emplace_back([this] { worker_loop(); });
    }

    ~WorkerPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void run(int n_jobs, const std::function<void(int)>& job) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            job_ = &job;
            total_ = n_jobs;
            next_.store(0, std::memory_order_relaxed);
            done_ = 0;
            ++generation_;
        }
        cv_.notify_all();
        const int finished = drain(job, n_jobs);
        std::unique_lock<std::mutex> lk(mu_);
        done_ += finished;
        cv_done_.wait(lk, [&] { return done_ == total_ && active_ == 0; });
        job_ = nullptr;
    }

private:
    int drain(const std::function<void(int)>& job, int total) {
        int finished = 0;
        for (;;) {
            const int i = next_.fetch_add(1, std::memory_order_relaxed);
            if (i >= total) break;
            job(i);
            ++finished;
        }
        return finished;
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        std::unique_lock<std::mutex> lk(mu_);
        for (;;) {
            cv_.wait(lk, [&] { return stop_ || (job_ != nullptr && generation_ != seen); });
            if (stop_) return;
            seen = generation_;
            const std::function<void(int)>* job = job_;
            const int total = total_;
            ++active_;
            lk.unlock();
            const int finished = drain(*job, total);
            lk.lock();
            done_ += finished;
            --active_;
            if (done_ == total_ && active_ == 0) cv_done_.notify_all();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_, cv_done_;
    std::vector<std::thread> threads_;
    const std::function<void(int)>* job_ = nullptr;
    std::atomic<int> next_{0};
    int done_ = 0;
    int active_ = 0;
    int total_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

int g_threads = 0;
WorkerPool* g_pool = nullptr;

int resolved_threads() {
    if (g_threads > 0) return g_threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

}  // namespace

void set_thread_count(int n) {
    if (n == g_threads) return;
    delete g_pool;
    g_pool = nullptr;
    g_threads = n;
}

int thread_count() { return resolved_threads(); }

void parallel_for_jobs(int n_jobs, const std::function<void(int)>& job) {
    if (n_jobs <= 0) return;
    const int workers = resolved_threads();
    if (workers <= 1 || n_jobs == 1) {
        for (int i = 0; i < n_jobs; ++i) job(i);
        return;
    }
    if (!g_pool) g_pool = new WorkerPool(workers - 1);
    g_pool->run(n_jobs, job);
}

int fixed_shard_count(int n) {
    if (n <= 0) return 0;
    return n < kMaxShards ? n : kMaxShards;
}

void parallel_shards(int n, const std::function<void(int, int, int)>& fn) {
    const int shards = fixed_shard_count(n);
    if (shards == 0) return;
    parallel_for_jobs(shards, [&](int s) {
        const int begin = static_cast<int>(static_cast<long long>(n) * s / shards);
        const int end = static_cast<int>(static_cast<long long>(n) * (s + 1) / shards);
        fn(s, begin, end);
    });
}

void parallel_rows(int n, const std::function<void(int)>& fn) {
    parallel_shards(n, [&](int, int begin, int end) {
        for (int r = begin; r < end; ++r) fn(r);
    });
}

}  // namespace osp
