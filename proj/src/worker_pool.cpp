#include "nstagger/worker_pool.hpp"

#include <algorithm>

namespace nstagger {

WorkerPool::WorkerPool(std::size_t workers) : workers_(std::max<std::size_t>(1, workers)) {
    if (workers_ == 1) return;
    for (std::size_t k = 0; k < workers_; ++k) threads_.emplace_back([this] { run(); });
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard lock(mu_);
        stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
}

std::size_t WorkerPool::default_size() {
    return std::max(1u, std::thread::hardware_concurrency());
}

void WorkerPool::parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (threads_.empty()) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::unique_lock lock(mu_);
    job_ = &fn;
    job_n_ = n;
    next_ = 0;
    finished_ = 0;
    error_ = nullptr;
    ++generation_;
    cv_.notify_all();
    done_cv_.wait(lock, [&] { return finished_ == job_n_; });
    job_ = nullptr;
    if (error_) std::rethrow_exception(error_);
}

void WorkerPool::run() {
    std::size_t seen = 0;
    std::unique_lock lock(mu_);
    for (;;) {
        cv_.wait(lock, [&] { return stop_ || (job_ && generation_ != seen && next_ < job_n_); });
        if (stop_) return;
        seen = generation_;
        while (job_ && next_ < job_n_) {
            const std::size_t i = next_++;
            const auto* fn = job_;
            lock.unlock();
            try {
                (*fn)(i);
            } catch (...) {
                std::lock_guard g(mu_);
                if (!error_) error_ = std::current_exception();
            }
            lock.lock();
            if (++finished_ == job_n_) done_cv_.notify_all();
        }
    }
}

} // namespace nstagger
