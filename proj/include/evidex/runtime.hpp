#pragma once

#include <chrono>
#include <condition_variable>
#include <coroutine>
#include <cstdint>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>
#include <queue>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

namespace evidex::rt {

// Single-threaded cooperative scheduler for the annotation pipeline. In
// simulated mode time is virtual and jumps straight to the next timer, so a
// run that would take an hour of wall time completes in milliseconds and
// yields exactly reproducible timings. In real mode time is the steady clock
// and blocking backend calls run on helper threads.

using Duration = std::chrono::nanoseconds;
using TimePoint = Duration;  // offset from loop creation

Duration from_seconds(double s);
double to_seconds(Duration d);

template <class T = void>
class Task;

namespace detail {

struct PromiseBase {
  std::coroutine_handle<> continuation = std::noop_coroutine();
  std::exception_ptr error;

  struct FinalAwaiter {
    bool await_ready() noexcept { return false; }
    template <class P>
    std::coroutine_handle<> await_suspend(std::coroutine_handle<P> h) noexcept {
      return h.promise().continuation;
    }
    void await_resume() noexcept {}
  };

  std::suspend_always initial_suspend() noexcept { return {}; }
  FinalAwaiter final_suspend() noexcept { return {}; }
  void unhandled_exception() noexcept { error = std::current_exception(); }
};

template <class T>
struct Promise : PromiseBase {
  std::optional<T> value;
  Task<T> get_return_object();
  template <class U>
  void return_value(U&& v) {
    value.emplace(std::forward<U>(v));
  }
};

template <>
struct Promise<void> : PromiseBase {
  Task<void> get_return_object();
  void return_void() noexcept {}
};

}  // namespace detail

// Lazily started; runs when awaited. Owns its frame.
template <class T>
class [[nodiscard]] Task {
 public:
  using promise_type = detail::Promise<T>;
  using handle_type = std::coroutine_handle<promise_type>;

  Task(Task&& other) noexcept : h_(std::exchange(other.h_, {})) {}
  Task& operator=(Task&& other) noexcept {
    if (this != &other) {
      if (h_) h_.destroy();
      h_ = std::exchange(other.h_, {});
    }
    return *this;
  }
  Task(const Task&) = delete;
  Task& operator=(const Task&) = delete;
  ~Task() {
    if (h_) h_.destroy();
  }

  bool await_ready() const noexcept { return false; }
  std::coroutine_handle<> await_suspend(std::coroutine_handle<> cont) noexcept {
    h_.promise().continuation = cont;
    return h_;
  }
  T await_resume() {
    if (h_.promise().error) std::rethrow_exception(h_.promise().error);
    if constexpr (!std::is_void_v<T>) return std::move(*h_.promise().value);
  }

 private:
  friend struct detail::Promise<T>;
  explicit Task(handle_type h) : h_(h) {}
  handle_type h_;
};

namespace detail {

template <class T>
Task<T> Promise<T>::get_return_object() {
  return Task<T>(std::coroutine_handle<Promise<T>>::from_promise(*this));
}

inline Task<void> Promise<void>::get_return_object() {
  return Task<void>(std::coroutine_handle<Promise<void>>::from_promise(*this));
}

// Fire-and-forget frame used by EventLoop::spawn; destroys itself on completion.
struct Detached {
  struct promise_type {
    Detached get_return_object() { return {std::coroutine_handle<promise_type>::from_promise(*this)}; }
    std::suspend_always initial_suspend() noexcept { return {}; }
    std::suspend_never final_suspend() noexcept { return {}; }
    void return_void() noexcept {}
    void unhandled_exception() noexcept { std::terminate(); }
  };
  std::coroutine_handle<promise_type> handle;
};

}  // namespace detail

class EventLoop {
 public:
  enum class Mode { simulated, real };

  explicit EventLoop(Mode mode = Mode::simulated);
  EventLoop(const EventLoop&) = delete;
  EventLoop& operator=(const EventLoop&) = delete;

  Mode mode() const { return mode_; }
  bool simulated() const { return mode_ == Mode::simulated; }

  TimePoint now() const;
  // Real: system clock. Simulated: a fixed epoch plus virtual time, so
  // timestamps written during a simulated run are reproducible.
  std::chrono::system_clock::time_point wall_time() const;

  struct SleepAwaiter {
    EventLoop& loop;
    TimePoint until;
    bool await_ready() const { return until <= loop.now(); }
    void await_suspend(std::coroutine_handle<> h) { loop.schedule_at(until, h); }
    void await_resume() const noexcept {}
  };
  SleepAwaiter sleep_until(TimePoint t) { return {*this, t}; }
  SleepAwaiter sleep_for(Duration d) { return {*this, now() + d}; }

  // Runs `fn` inline in simulated mode, on a helper thread in real mode.
  template <class F>
  struct OffloadAwaiter {
    using Result = std::invoke_result_t<F&>;
    EventLoop& loop;
    F fn;
    std::optional<Result> result{};
    std::exception_ptr error{};

    void invoke() {
      try {
        result.emplace(fn());
      } catch (...) {
        error = std::current_exception();
      }
    }
    bool await_ready() {
      if (!loop.simulated()) return false;
      invoke();
      return true;
    }
    void await_suspend(std::coroutine_handle<> h) {
      loop.begin_external();
      std::thread([this, h] {
        invoke();
        loop.post(h);
      }).detach();
    }
    Result await_resume() {
      if (error) std::rethrow_exception(error);
      return std::move(*result);
    }
  };
  template <class F>
  OffloadAwaiter<F> offload(F fn) {
    return {*this, std::move(fn)};
  }

  void spawn(Task<void> task);

  // Runs until no task can make progress. Rethrows the first exception that
  // escaped a spawned task; throws evidex::Error if tasks remain suspended
  // with nothing left to wake them.
  void run();

  void schedule(std::coroutine_handle<> h) { ready_.push_back(h); }
  void schedule_at(TimePoint t, std::coroutine_handle<> h);
  // Thread-safe; pairs with begin_external().
  void post(std::coroutine_handle<> h);
  void begin_external();

 private:
  static detail::Detached run_detached(Task<void> task, EventLoop* loop);

  struct Timer {
    TimePoint at;
    uint64_t seq;
    std::coroutine_handle<> h;
    bool operator>(const Timer& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  Mode mode_;
  std::chrono::steady_clock::time_point origin_;
  std::chrono::system_clock::time_point wall_origin_;
  TimePoint virtual_now_{0};
  std::deque<std::coroutine_handle<>> ready_;
  std::priority_queue<Timer, std::vector<Timer>, std::greater<>> timers_;
  uint64_t timer_seq_ = 0;
  int live_ = 0;
  std::exception_ptr error_;

  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<std::coroutine_handle<>> posted_;
  int pending_external_ = 0;
};

// FIFO counting semaphore. release() hands the permit straight to the oldest
// waiter, so no later arrival can overtake it.
class Semaphore {
 public:
  Semaphore(EventLoop& loop, int permits);

  struct Acquire {
    Semaphore& sem;
    bool await_ready() {
      if (sem.permits_ > 0) {
        --sem.permits_;
        return true;
      }
      return false;
    }
    void await_suspend(std::coroutine_handle<> h) { sem.waiters_.push_back(h); }
    void await_resume() const noexcept {}
  };
  Acquire acquire() { return {*this}; }
  void release();

  int available() const { return permits_; }
  std::size_t waiting() const { return waiters_.size(); }

 private:
  EventLoop& loop_;
  int permits_;
  std::deque<std::coroutine_handle<>> waiters_;
};

// One-shot latch.
class Event {
 public:
  explicit Event(EventLoop& loop) : loop_(&loop) {}

  struct Wait {
    Event& ev;
    bool await_ready() const noexcept { return ev.set_; }
    void await_suspend(std::coroutine_handle<> h) { ev.waiters_.push_back(h); }
    void await_resume() const noexcept {}
  };
  Wait wait() { return {*this}; }
  void set();
  bool is_set() const { return set_; }

 private:
  EventLoop* loop_;
  bool set_ = false;
  std::vector<std::coroutine_handle<>> waiters_;
};

// Minimum spacing between dispatches: ceil(1e9 / rps) nanoseconds. Pure
// bookkeeping; the caller sleeps until the returned instant.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second);

  TimePoint acquire(TimePoint now);
  Duration interval() const { return interval_; }

 private:
  Duration interval_;
  std::optional<TimePoint> last_;
};

namespace detail {

template <class T>
struct WhenAllState {
  explicit WhenAllState(EventLoop& loop, std::size_t n) : results(n), remaining(n), done(loop) {}
  std::vector<std::optional<T>> results;
  std::size_t remaining;
  Event done;
  std::exception_ptr error;
};

template <class T>
Task<void> when_all_child(Task<T> task, WhenAllState<T>* state, std::size_t index) {
  try {
    state->results[index].emplace(co_await task);
  } catch (...) {
    if (!state->error) state->error = std::current_exception();
  }
  if (--state->remaining == 0) state->done.set();
}

}  // namespace detail

// Starts every task (in order) and resumes once all have finished. Results
// keep the input order. The first exception is rethrown after all finish.
template <class T>
Task<std::vector<T>> when_all(EventLoop& loop, std::vector<Task<T>> tasks) {
  detail::WhenAllState<T> state(loop, tasks.size());
  if (!tasks.empty()) {
    for (std::size_t i = 0; i < tasks.size(); ++i) loop.spawn(detail::when_all_child(std::move(tasks[i]), &state, i));
    co_await state.done.wait();
  }
  if (state.error) std::rethrow_exception(state.error);
  std::vector<T> out;
  out.reserve(state.results.size());
  for (auto& r : state.results) out.push_back(std::move(*r));
  co_return out;
}

}  // namespace evidex::rt
