#pragma once

// Shared plumbing: typed errors mapped to CLI exit codes, a deterministic
// RNG facade (the std distributions are implementation-defined, so all
// draws go through hand-rolled transforms), and a small thread pool whose
// work partitioning never changes numeric results.

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace mcseg {

// Exit-code classes: 1 usage/config, 2 data/format, 3 numerical failure.
enum class ErrorKind { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(ErrorKind::usage, msg) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(ErrorKind::numeric, msg) {}
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    return splitmix64(a * 0x9e3779b97f4a7c15ull + splitmix64(b));
}

// Deterministic RNG. mt19937_64 is pinned by the standard; the uniform,
// bounded-int and normal transforms are written out so streams are
// reproducible across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1) with 53-bit resolution
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased integer in [0, n) by rejection
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t lim = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = gen_();
        } while (v >= lim);
        return v % n;
    }

    int64_t range(int64_t lo, int64_t hi) {  // inclusive bounds
        return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Box-Muller with a cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Fisher-Yates with the rejection sampler above; std::shuffle is
    // implementation-defined and would not reproduce across toolchains.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

namespace detail {

class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int size() const { return size_; }

    void resize(int n) {
        if (n < 1) n = 1;
        std::unique_lock<std::mutex> main_lock(main_mutex_);
        if (n == size_) return;
        shutdown_workers();
        size_ = n;
        spawn_workers();
    }

    // Runs fn(begin, end) over a chunked partition of [0, n). Chunk layout
    // depends only on n, so any per-chunk computation that owns its output
    // range is bit-reproducible for every pool size.
    void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        std::unique_lock<std::mutex> main_lock(main_mutex_);
        const int64_t chunks = n < kChunksPerRun ? n : kChunksPerRun;
        if (size_ == 1 || chunks == 1 || workers_.empty()) {
            for (int64_t c = 0; c < chunks; ++c) {
                auto [b, e] = chunk_bounds(n, chunks, c);
                fn(b, e);
            }
            return;
        }
        {
            std::lock_guard<std::mutex> lk(mutex_);
            job_fn_ = &fn;
            job_n_ = n;
            job_chunks_ = chunks;
            next_chunk_.store(0, std::memory_order_relaxed);
            pending_ = chunks;
            ++job_id_;
        }
        cv_.notify_all();
        run_chunks(fn, n, chunks);  // main thread participates
        std::unique_lock<std::mutex> lk(mutex_);
        done_cv_.wait(lk, [&] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

private:
    static constexpr int64_t kChunksPerRun = 64;

    ThreadPool() {
        size_ = default_size();
        spawn_workers();
    }

    ~ThreadPool() { shutdown_workers(); }

    static int default_size() {
        if (const char* env = std::getenv("MCSEG_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }

    static std::pair<int64_t, int64_t> chunk_bounds(int64_t n, int64_t chunks, int64_t c) {
        const int64_t base = n / chunks, rem = n % chunks;
        const int64_t b = c * base + (c < rem ? c : rem);
        return {b, b + base + (c < rem ? 1 : 0)};
    }

    void run_chunks(const std::function<void(int64_t, int64_t)>& fn, int64_t n, int64_t chunks) {
        for (;;) {
            const int64_t c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            if (c >= chunks) break;
            auto [b, e] = chunk_bounds(n, chunks, c);
            fn(b, e);
            std::lock_guard<std::mutex> lk(mutex_);
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }

    void spawn_workers() {
        stop_ = false;
        for (int i = 1; i < size_; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    void shutdown_workers() {
        {
            std::lock_guard<std::mutex> lk(mutex_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
        workers_.clear();
    }

    void worker_loop() {
        uint64_t seen_job = 0;
        for (;;) {
            const std::function<void(int64_t, int64_t)>* fn = nullptr;
            int64_t n = 0, chunks = 0;
            {
                std::unique_lock<std::mutex> lk(mutex_);
                cv_.wait(lk, [&] { return stop_ || (job_fn_ != nullptr && job_id_ != seen_job); });
                if (stop_) return;
                seen_job = job_id_;
                fn = job_fn_;
                n = job_n_;
                chunks = job_chunks_;
            }
            run_chunks(*fn, n, chunks);
        }
    }

    int size_ = 1;
    std::vector<std::thread> workers_;
    std::mutex main_mutex_;  // serializes parallel_for callers and resize
    std::mutex mutex_;
    std::condition_variable cv_, done_cv_;
    bool stop_ = false;
    const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
    int64_t job_n_ = 0, job_chunks_ = 0;
    std::atomic<int64_t> next_chunk_{0};
    int64_t pending_ = 0;
    uint64_t job_id_ = 0;
};

}  // namespace detail

inline int thread_count() { return detail::ThreadPool::instance().size(); }
inline void set_thread_count(int n) { detail::ThreadPool::instance().resize(n); }

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    detail::ThreadPool::instance().parallel_for(n, fn);
}

}  // namespace mcseg
