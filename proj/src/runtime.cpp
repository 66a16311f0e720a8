#include "evidex/runtime.hpp"

#include <cmath>

#include <fmt/format.h>

#include "evidex/error.hpp"

namespace evidex::rt {

Duration from_seconds(double s) { return Duration(static_cast<int64_t>(std::llround(s * 1e9))); }

double to_seconds(Duration d) { return static_cast<double>(d.count()) / 1e9; }

EventLoop::EventLoop(Mode mode)
    : mode_(mode),
      origin_(std::chrono::steady_clock::now()),
      // 2024-01-01T00:00:00Z for simulated runs.
      wall_origin_(mode == Mode::simulated ? std::chrono::system_clock::time_point(std::chrono::seconds(1704067200))
                                           : std::chrono::system_clock::now()) {}

TimePoint EventLoop::now() const {
  if (simulated()) return virtual_now_;
  return std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now() - origin_);
}

std::chrono::system_clock::time_point EventLoop::wall_time() const {
  if (simulated()) return wall_origin_ + std::chrono::duration_cast<std::chrono::system_clock::duration>(virtual_now_);
  return std::chrono::system_clock::now();
}

void EventLoop::schedule_at(TimePoint t, std::coroutine_handle<> h) { timers_.push({t, timer_seq_++, h}); }

void EventLoop::post(std::coroutine_handle<> h) {
  {
    std::lock_guard lock(mutex_);
    posted_.push_back(h);
  }
  cv_.notify_one();
}

void EventLoop::begin_external() {
  std::lock_guard lock(mutex_);
  ++pending_external_;
}

detail::Detached EventLoop::run_detached(Task<void> task, EventLoop* loop) {
  try {
    co_await task;
  } catch (...) {
    if (!loop->error_) loop->error_ = std::current_exception();
  }
  --loop->live_;
}

void EventLoop::spawn(Task<void> task) {
  ++live_;
  schedule(run_detached(std::move(task), this).handle);
}

void EventLoop::run() {
  for (;;) {
    if (!simulated()) {
      std::lock_guard lock(mutex_);
      for (auto h : posted_) {
        ready_.push_back(h);
        --pending_external_;
      }
      posted_.clear();
    }
    if (!ready_.empty()) {
      auto h = ready_.front();
      ready_.pop_front();
      h.resume();
      continue;
    }
    if (!timers_.empty()) {
      const Timer next = timers_.top();
      if (simulated()) {
        virtual_now_ = std::max(virtual_now_, next.at);
      } else if (next.at > now()) {
        std::unique_lock lock(mutex_);
        cv_.wait_until(lock, origin_ + next.at, [&] { return !posted_.empty(); });
        continue;
      }
      timers_.pop();
      ready_.push_back(next.h);
      continue;
    }
    std::unique_lock lock(mutex_);
    if (pending_external_ == 0 && posted_.empty()) break;
    cv_.wait(lock, [&] { return !posted_.empty(); });
  }
  if (error_) std::rethrow_exception(std::exchange(error_, nullptr));
  if (live_ > 0) throw Error(fmt::format("event loop stalled with {} suspended task(s)", live_));
}

Semaphore::Semaphore(EventLoop& loop, int permits) : loop_(loop), permits_(permits) {
  if (permits < 1) throw InvalidArgument(fmt::format("semaphore needs at least one permit, got {}", permits));
}

void Semaphore::release() {
  if (waiters_.empty()) {
    ++permits_;
    return;
  }
  auto h = waiters_.front();
  waiters_.pop_front();
  loop_.schedule(h);
}

void Event::set() {
  if (set_) return;
  set_ = true;
  for (auto h : waiters_) loop_->schedule(h);
  waiters_.clear();
}

RateLimiter::RateLimiter(double requests_per_second) {
  if (!(requests_per_second > 0) || !std::isfinite(requests_per_second))
    throw InvalidArgument(fmt::format("rate limit must be positive, got {}", requests_per_second));
  interval_ = Duration(static_cast<int64_t>(std::ceil(1e9 / requests_per_second)));
}

TimePoint RateLimiter::acquire(TimePoint now) {
  const TimePoint dispatch = last_ ? std::max(now, *last_ + interval_) : now;
  last_ = dispatch;
  return dispatch;
}

}  // namespace evidex::rt
