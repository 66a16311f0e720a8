#include <gtest/gtest.h>

#include <atomic>
#include <string>

#include "evidex/error.hpp"
#include "evidex/runtime.hpp"

using namespace evidex::rt;
using namespace std::chrono_literals;

namespace {

Task<int> add_later(EventLoop& loop, int a, int b, Duration delay) {
  co_await loop.sleep_for(delay);
  co_return a + b;
}

Task<void> record_at(EventLoop& loop, Duration delay, std::vector<std::pair<int, double>>& out, int tag) {
  co_await loop.sleep_for(delay);
  out.emplace_back(tag, to_seconds(loop.now()));
}

Task<void> hold(EventLoop& loop, Semaphore& sem, Duration d, std::vector<std::string>& log, std::string name) {
  co_await sem.acquire();
  log.push_back("+" + name);
  co_await loop.sleep_for(d);
  log.push_back("-" + name);
  sem.release();
}

Task<void> boom(EventLoop& loop) {
  co_await loop.sleep_for(1s);
  throw std::runtime_error("boom");
}

Task<void> wait_forever(Event& ev) { co_await ev.wait(); }

}  // namespace

TEST(Seconds, Conversions) {
  EXPECT_EQ(from_seconds(1.5), 1500ms);
  EXPECT_DOUBLE_EQ(to_seconds(250ms), 0.25);
}

TEST(EventLoopTest, SimulatedTimeJumps) {
  EventLoop loop;
  std::vector<std::pair<int, double>> order;
  loop.spawn(record_at(loop, 3s, order, 3));
  loop.spawn(record_at(loop, 1s, order, 1));
  loop.spawn(record_at(loop, 2s, order, 2));
  loop.spawn(record_at(loop, 1s, order, 4));  // same instant: FIFO by scheduling
  loop.run();
  EXPECT_EQ(order, (std::vector<std::pair<int, double>>{{1, 1.0}, {4, 1.0}, {2, 2.0}, {3, 3.0}}));
  EXPECT_DOUBLE_EQ(to_seconds(loop.now()), 3.0);
}

TEST(EventLoopTest, WhenAllKeepsOrder) {
  EventLoop loop;
  std::vector<int> got;
  auto main = [&]() -> Task<void> {
    std::vector<Task<int>> tasks;
    tasks.push_back(add_later(loop, 1, 1, 3s));
    tasks.push_back(add_later(loop, 2, 2, 1s));
    tasks.push_back(add_later(loop, 3, 3, 2s));
    got = co_await when_all(loop, std::move(tasks));
  };
  loop.spawn(main());
  loop.run();
  EXPECT_EQ(got, (std::vector<int>{2, 4, 6}));
  EXPECT_DOUBLE_EQ(to_seconds(loop.now()), 3.0);
}

TEST(EventLoopTest, ExceptionsPropagate) {
  EventLoop loop;
  loop.spawn(boom(loop));
  EXPECT_THROW(loop.run(), std::runtime_error);
}

TEST(EventLoopTest, DeadlockDetected) {
  EventLoop loop;
  Event ev(loop);
  loop.spawn(wait_forever(ev));
  EXPECT_THROW(loop.run(), evidex::Error);
}

TEST(EventLoopTest, SimulatedWallTimeIsFixed) {
  EventLoop a, b;
  EXPECT_EQ(a.wall_time(), b.wall_time());
}

TEST(EventLoopTest, RealModeOffloads) {
  EventLoop loop(EventLoop::Mode::real);
  std::atomic<std::thread::id> worker{};
  int value = 0;
  auto main = [&]() -> Task<void> {
    value = co_await loop.offload([&] {
      worker = std::this_thread::get_id();
      return 41;
    });
    value += 1;
  };
  loop.spawn(main());
  loop.run();
  EXPECT_EQ(value, 42);
  EXPECT_NE(worker.load(), std::this_thread::get_id());
}

TEST(SemaphoreTest, FifoAndBounded) {
  EventLoop loop;
  Semaphore sem(loop, 2);
  std::vector<std::string> log;
  loop.spawn(hold(loop, sem, 5s, log, "a"));
  loop.spawn(hold(loop, sem, 1s, log, "b"));
  loop.spawn(hold(loop, sem, 1s, log, "c"));
  loop.spawn(hold(loop, sem, 1s, log, "d"));
  loop.run();
  EXPECT_EQ(log, (std::vector<std::string>{"+a", "+b", "-b", "+c", "-c", "+d", "-d", "-a"}));
  EXPECT_EQ(sem.available(), 2);
  EXPECT_EQ(sem.waiting(), 0u);
}

TEST(RateLimiterTest, SpacingIsCeilOfInterval) {
  RateLimiter r(3.0);
  EXPECT_EQ(r.interval(), Duration(333'333'334));
  const TimePoint t0 = r.acquire(TimePoint{0});
  const TimePoint t1 = r.acquire(TimePoint{0});
  const TimePoint t2 = r.acquire(TimePoint{10});
  const TimePoint t3 = r.acquire(from_seconds(5));
  EXPECT_EQ(t0, TimePoint{0});
  EXPECT_EQ(t1, r.interval());
  EXPECT_EQ(t2, 2 * r.interval());
  EXPECT_EQ(t3, from_seconds(5));
  EXPECT_EQ(RateLimiter(5.0).interval(), 200ms);
}
