#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "tilesim/engine.hpp"

using namespace tilesim;

namespace {

constexpr SimTime ns(std::int64_t v) { return SimTime{v}; }

Process hold_for(Engine& eng, Resource& r, SimTime dur,
                 std::vector<SimTime>* grants) {
  SimTime g = co_await eng.claim(r);
  grants->push_back(g);
  co_await eng.delay(dur);
  eng.release(r);
}

Process claim_two(Engine& eng, Resource& a, Resource& b, SimTime pause) {
  co_await eng.claim(a);
  co_await eng.delay(pause);
  co_await eng.claim(b);
  eng.release(b);
  eng.release(a);
}

Process busy(Engine& eng, SimTime dur) { co_await eng.delay(dur); }

// Scans the trace for the engine-level invariants: monotone dequeue times,
// at most one holder per resource, every acquire matched by one release.
void check_trace_invariants(const Engine& eng) {
  std::int64_t last_fire = 0;
  std::map<std::int32_t, std::uint32_t> holder;
  std::size_t acquires = 0;
  std::size_t releases = 0;
  for (const TraceRecord& r : eng.trace()) {
    switch (r.op) {
      case TraceOp::Fire:
        CHECK(r.t >= last_fire);
        last_fire = r.t;
        break;
      case TraceOp::Acquire:
        CHECK(holder.find(r.resource) == holder.end());
        holder[r.resource] = r.proc;
        ++acquires;
        break;
      case TraceOp::Release: {
        auto it = holder.find(r.resource);
        REQUIRE(it != holder.end());
        CHECK(it->second == r.proc);
        holder.erase(it);
        ++releases;
        break;
      }
      default:
        break;
    }
  }
  CHECK(holder.empty());
  CHECK(acquires == releases);
}

}  // namespace

TEST_CASE("empty queue runs to time zero") {
  Engine eng;
  CHECK(eng.run_until_idle() == SimTime::zero());
}

TEST_CASE("schedule fires forward events and breaks ties by sequence") {
  Engine eng;
  std::vector<std::string> order;
  eng.schedule(ns(5), EventKind::Compute, [&] { order.push_back("later"); });
  eng.schedule(ns(3), EventKind::Compute, [&] {
    order.push_back("first-at-3");
    // Scheduling at the current instant is allowed; it fires after
    // already-queued events at t=3 with lower sequence numbers.
    eng.schedule(ns(3), EventKind::Compute,
                 [&] { order.push_back("same-instant"); });
  });
  eng.schedule(ns(3), EventKind::Compute,
               [&] { order.push_back("second-at-3"); });
  CHECK(eng.run_until_idle() == ns(5));
  CHECK(order == std::vector<std::string>{"first-at-3", "second-at-3",
                                          "same-instant", "later"});
}

TEST_CASE("scheduling in the past is rejected") {
  Engine eng;
  eng.schedule(ns(3), EventKind::Compute, [&] {
    CHECK_THROWS_AS(eng.schedule(ns(2), EventKind::Compute, [] {}),
                    SimError);
  });
  eng.run_until_idle();
}

TEST_CASE("cancelled events do not fire") {
  Engine eng;
  bool fired = false;
  auto id = eng.schedule(ns(7), EventKind::Compute, [&] { fired = true; });
  eng.cancel(id);
  CHECK(eng.run_until_idle() == SimTime::zero());
  CHECK(!fired);
}

TEST_CASE("two independent compute processes finish at their duration") {
  Engine eng;
  Process a = busy(eng, ns(10));
  Process b = busy(eng, ns(10));
  CHECK(eng.run_until_idle() == ns(10));
  CHECK(a.finished());
  CHECK(b.finished());
}

TEST_CASE("free resource grants immediately, contended FIFO in issue order") {
  Engine eng;
  Resource& r = eng.resource(1, "r");
  std::vector<SimTime> grants;
  // Three requesters at t=0 each holding 5 time units: grants at 0, 5, 10.
  Process p1 = hold_for(eng, r, ns(5), &grants);
  Process p2 = hold_for(eng, r, ns(5), &grants);
  Process p3 = hold_for(eng, r, ns(5), &grants);
  CHECK(eng.run_until_idle() == ns(15));
  CHECK(grants == std::vector<SimTime>{ns(0), ns(5), ns(10)});
  CHECK(p1.finished());
  CHECK(p2.finished());
  CHECK(p3.finished());
  check_trace_invariants(eng);
}

TEST_CASE("atomic claims overtake only on disjoint resource sets") {
  Engine eng;
  Resource& a = eng.resource(1, "a");
  Resource& b = eng.resource(2, "b");
  std::vector<SimTime> ga;
  std::vector<SimTime> gb;
  Process p1 = hold_for(eng, a, ns(10), &ga);
  Process p2 = hold_for(eng, a, ns(10), &ga);  // conflicts: waits for p1
  Process p3 = hold_for(eng, b, ns(4), &gb);   // disjoint: runs right away
  eng.run_until_idle();
  CHECK(ga == std::vector<SimTime>{ns(0), ns(10)});
  CHECK(gb == std::vector<SimTime>{ns(0)});
  check_trace_invariants(eng);
}

TEST_CASE("re-entrant acquire by the holder is an error") {
  Engine eng;
  Resource& r = eng.resource(1, "r");
  auto proc = [](Engine& e, Resource& res) -> Process {
    co_await e.claim(res);
    co_await e.claim(res);  // same process, same resource
    e.release(res);
  };
  Process p = proc(eng, r);
  CHECK_THROWS_AS(eng.run_until_idle(), SimError);
}

TEST_CASE("circular wait is reported as a deadlock naming the cycle") {
  Engine eng;
  Resource& a = eng.resource(1, "res-a");
  Resource& b = eng.resource(2, "res-b");
  Process p = claim_two(eng, a, b, ns(1));
  Process q = claim_two(eng, b, a, ns(1));
  eng.name_process(p, "proc-p");
  eng.name_process(q, "proc-q");
  try {
    eng.run_until_idle();
    FAIL("expected DeadlockError");
  } catch (const DeadlockError& e) {
    std::string msg = e.what();
    CHECK(msg.find("proc-p") != std::string::npos);
    CHECK(msg.find("proc-q") != std::string::npos);
    CHECK(msg.find("cycle") != std::string::npos);
  }
}

TEST_CASE("joining a process resumes after it completes") {
  Engine eng;
  std::vector<int> order;
  auto child = [](Engine& e, std::vector<int>* ord) -> Process {
    co_await e.delay(ns(5));
    ord->push_back(1);
  };
  auto parent = [](Engine& e, Process c, std::vector<int>* ord) -> Process {
    co_await c;
    ord->push_back(2);
    co_await e.delay(ns(2));
    ord->push_back(3);
  };
  Process c = child(eng, &order);
  Process p = parent(eng, c, &order);
  CHECK(eng.run_until_idle() == ns(7));
  CHECK(order == std::vector<int>{1, 2, 3});
}

TEST_CASE("message queue delivers in FIFO order across time") {
  Engine eng;
  MsgQueue<int> q(eng, "q");
  std::vector<int> seen;
  auto producer = [](Engine& e, MsgQueue<int>* mq) -> Process {
    mq->push(1);
    co_await e.delay(ns(4));
    mq->push(2);
    mq->push(3);
  };
  auto consumer = [](Engine& e, MsgQueue<int>* mq,
                     std::vector<int>* out) -> Process {
    for (int i = 0; i < 3; ++i) {
      int v = co_await mq->pop();
      out->push_back(v);
    }
    (void)e;
  };
  Process prod = producer(eng, &q);
  Process cons = consumer(eng, &q, &seen);
  eng.run_until_idle();
  CHECK(seen == std::vector<int>{1, 2, 3});
}

TEST_CASE("identical scenarios produce identical trace hashes") {
  auto run = [] {
    Engine eng;
    Resource& r = eng.resource(1, "r");
    std::vector<SimTime> grants;
    Process p1 = hold_for(eng, r, ns(5), &grants);
    Process p2 = hold_for(eng, r, ns(7), &grants);
    Process p3 = busy(eng, ns(3));
    eng.run_until_idle();
    return eng.trace_hash();
  };
  CHECK(run() == run());
}

TEST_CASE("peak live process count is tracked") {
  Engine eng;
  Process a = busy(eng, ns(4));
  Process b = busy(eng, ns(4));
  Process c = busy(eng, ns(4));
  eng.run_until_idle();
  CHECK(eng.live_processes() == 0);
  CHECK(eng.peak_live_processes() == 3);
}
