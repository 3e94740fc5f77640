#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace nstagger {

/// Fixed-size pool running indexed tasks. `parallel_for` blocks until every
/// index has run; with one worker the tasks run inline on the caller, in order.
class WorkerPool {
public:
    explicit WorkerPool(std::size_t workers);
    ~WorkerPool();
    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    std::size_t size() const { return workers_; }

    /// Rethrows the first exception raised by any task after all tasks finish.
    void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

    static std::size_t default_size();

private:
    void run();

    std::size_t workers_;
    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(std::size_t)>* job_ = nullptr;
    std::size_t job_n_ = 0;
    std::size_t next_ = 0;
    std::size_t finished_ = 0;
    std::size_t generation_ = 0;
    bool stop_ = false;
    std::exception_ptr error_;
};

} // namespace nstagger
