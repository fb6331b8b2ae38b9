#pragma once

#include <coroutine>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tilesim/time.hpp"

namespace tilesim {

class Engine;

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or plan input; CLI maps this to exit code 2.
class ConfigError : public SimError {
 public:
  using SimError::SimError;
};

// Non-empty wait queues with an empty event queue; CLI exit code 3.
class DeadlockError : public SimError {
 public:
  using SimError::SimError;
};

enum class EventKind : std::uint8_t {
  Compute,
  Transfer,
  DramAccess,
  Message,
  ResourceGrant,
};

const char* event_kind_name(EventKind k);

// Exclusive resource with FIFO granting. At most one holder at any SimTime;
// grants are issued in request order with the claim sequence as tie-break.
class Resource {
 public:
  const std::string& name() const { return name_; }
  std::uint32_t index() const { return index_; }
  bool held() const { return holder_ >= 0; }
  std::int64_t holder() const { return holder_; }

 private:
  friend class Engine;
  Resource(std::uint32_t index, std::string name)
      : index_(index), name_(std::move(name)) {}

  std::uint32_t index_;
  std::string name_;
  std::int64_t holder_ = -1;  // process id, -1 when free
};

namespace detail {

struct ProcessState {
  std::uint32_t id = 0;
  bool finished = false;
  std::coroutine_handle<> frame{};
  // FIFO of (handle, waiting process id) resumed when this process finishes.
  std::vector<std::pair<std::coroutine_handle<>, std::uint32_t>> joiners;
  const char* blocked_on = nullptr;
  std::string blocked_detail;
};

// An all-or-nothing request for a set of resources. Owned by the awaiting
// coroutine frame; the engine only keeps a pointer while the claim pends.
struct Claim {
  std::uint64_t seq = 0;
  std::uint32_t proc = 0;
  std::vector<Resource*> resources;
  bool granted = false;
  SimTime grant_time{};
  std::coroutine_handle<> waiter{};
};

}  // namespace detail

// Handle to a simulation process (a coroutine driven by the engine).
// Processes start lazily: creation schedules the first resumption at the
// current time. `co_await process` waits for completion.
class [[nodiscard]] Process {
 public:
  struct promise_type;

  Process() = default;

  bool valid() const { return static_cast<bool>(st_); }
  bool finished() const { return st_ && st_->finished; }
  std::uint32_t id() const { return st_->id; }

  struct JoinAwaiter {
    Engine* eng;
    std::shared_ptr<detail::ProcessState> st;
    bool await_ready() const noexcept { return st->finished; }
    void await_suspend(std::coroutine_handle<> h);
    void await_resume() const noexcept {}
  };
  JoinAwaiter operator co_await() const { return JoinAwaiter{eng_, st_}; }

 private:
  friend struct promise_type;
  Process(std::shared_ptr<detail::ProcessState> st, Engine* eng)
      : st_(std::move(st)), eng_(eng) {}

  std::shared_ptr<detail::ProcessState> st_;
  Engine* eng_ = nullptr;
};

enum class TraceOp : std::uint8_t {
  Spawn,
  Fire,
  Acquire,
  Release,
  End,
  Note,
};

const char* trace_op_name(TraceOp op);

struct TraceRecord {
  std::int64_t t = 0;
  TraceOp op = TraceOp::Fire;
  EventKind kind = EventKind::Message;
  std::uint32_t proc = 0;
  std::int32_t resource = -1;  // -1: none
  std::int64_t aux = 0;
};

// Deterministic single-threaded discrete-event kernel. Instances share
// nothing; callers may run many engines concurrently.
class Engine {
 public:
  Engine() = default;
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  SimTime now() const { return clock_; }

  // Schedules a raw callback event. Rejects events in the past (a scheduler
  // bug, not a modeled phenomenon). Returns a handle usable for cancellation.
  std::uint64_t schedule(SimTime fire_at, EventKind kind,
                         std::function<void()> fn);
  void cancel(std::uint64_t event_id);

  // Processes all events in (fire_at, seq) order until the queue is empty.
  // Throws DeadlockError if blocked processes remain once the queue drains.
  SimTime run_until_idle();

  // One resource per key for the life of the engine.
  Resource& resource(std::uint64_t key, std::string_view name);
  std::size_t resource_count() const { return resources_.size(); }
  const Resource& resource_at(std::uint32_t index) const {
    return resources_[index];
  }

  struct DelayAwaiter {
    Engine* eng;
    SimTime dur;
    EventKind kind;
    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<> h);
    void await_resume() const noexcept {}
  };
  DelayAwaiter delay(SimTime dur, EventKind kind = EventKind::Compute) {
    return DelayAwaiter{this, dur, kind};
  }

  struct ClaimAwaiter {
    Engine* eng;
    detail::Claim claim;
    explicit ClaimAwaiter(Engine* e, std::vector<Resource*> rs) : eng(e) {
      claim.resources = std::move(rs);
    }
    ClaimAwaiter(const ClaimAwaiter&) = delete;
    ClaimAwaiter(ClaimAwaiter&&) = delete;
    ~ClaimAwaiter();
    bool await_ready();
    void await_suspend(std::coroutine_handle<> h);
    SimTime await_resume() const { return claim.grant_time; }
  };
  // Atomic multi-resource acquire: takes effect only when every resource in
  // the set is free; pending claims are resolved FIFO by issue sequence.
  ClaimAwaiter claim(std::vector<Resource*> resources) {
    return ClaimAwaiter(this, std::move(resources));
  }
  ClaimAwaiter claim(Resource& r) {
    return ClaimAwaiter(this, std::vector<Resource*>{&r});
  }

  void release(std::span<Resource* const> resources);
  void release(Resource& r) {
    Resource* p = &r;
    release(std::span<Resource* const>(&p, 1));
  }

  // Names are diagnostic only; they do not enter the trace hash.
  void name_process(const Process& p, std::string name);
  void name_process(std::uint32_t id, std::string name);
  const std::string& process_name(std::uint32_t id) const;
  std::uint32_t current_process() const { return current_; }

  std::size_t live_processes() const { return alive_.size(); }
  std::size_t peak_live_processes() const { return peak_live_; }

  const std::vector<TraceRecord>& trace() const { return trace_; }
  void note(std::int64_t aux, std::int32_t resource = -1);
  std::uint64_t trace_hash() const;
  void write_trace(std::ostream& os) const;

 private:
  friend struct Process::promise_type;
  friend struct Process::JoinAwaiter;
  friend class Gate;

  struct QueueItem {
    SimTime t;
    std::uint64_t seq = 0;
    EventKind kind = EventKind::Message;
    std::uint32_t proc = 0;
    std::coroutine_handle<> h{};
    bool callback = false;
  };
  struct ItemOrder {
    bool operator()(const QueueItem& a, const QueueItem& b) const {
      if (a.t != b.t) return a.t > b.t;
      return a.seq > b.seq;
    }
  };

  std::uint64_t push_item(SimTime t, EventKind kind, std::uint32_t proc,
                          std::coroutine_handle<> h, bool callback);
  std::uint64_t register_process(std::shared_ptr<detail::ProcessState> st);
  void finish_process(const std::shared_ptr<detail::ProcessState>& st);
  void report_failure(std::exception_ptr e);
  bool submit_claim(detail::Claim* c);
  void withdraw_claim(detail::Claim* c);
  void try_grant_pending();
  detail::ProcessState* state_of(std::uint32_t id);
  void set_blocked(std::uint32_t id, const char* what, std::string detail);
  [[noreturn]] void throw_deadlock();

  SimTime clock_{};
  std::uint64_t next_seq_ = 1;
  std::priority_queue<QueueItem, std::vector<QueueItem>, ItemOrder> queue_;
  std::unordered_map<std::uint64_t, std::function<void()>> callbacks_;
  std::unordered_map<std::uint64_t, bool> cancelled_;

  std::deque<Resource> resources_;
  std::unordered_map<std::uint64_t, std::uint32_t> resource_keys_;
  std::vector<detail::Claim*> pending_claims_;

  std::uint32_t next_proc_id_ = 1;
  std::unordered_map<std::uint32_t, std::shared_ptr<detail::ProcessState>>
      alive_;
  std::vector<std::string> proc_names_;  // index = process id
  std::size_t peak_live_ = 0;
  std::uint32_t current_ = 0;

  std::exception_ptr failure_{};
  std::vector<TraceRecord> trace_;
};

struct Process::promise_type {
  Engine* eng_ = nullptr;
  std::shared_ptr<detail::ProcessState> st_;

  // Process coroutines take Engine& as their first parameter (second, for
  // lambda coroutines, where the closure leads the argument list).
  template <class... Args>
  explicit promise_type(Engine& eng, Args&&...) : eng_(&eng) {}
  template <class First, class... Args>
  promise_type(First&&, Engine& eng, Args&&...) : eng_(&eng) {}

  Process get_return_object() {
    st_ = std::make_shared<detail::ProcessState>();
    st_->frame =
        std::coroutine_handle<promise_type>::from_promise(*this);
    eng_->register_process(st_);
    return Process(st_, eng_);
  }

  std::suspend_always initial_suspend() noexcept { return {}; }

  struct FinalAwaiter {
    Engine* eng;
    std::shared_ptr<detail::ProcessState> st;
    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<> h) noexcept {
      Engine* e = eng;
      auto state = std::move(st);
      state->frame = {};
      e->finish_process(state);
      h.destroy();
    }
    void await_resume() const noexcept {}
  };
  FinalAwaiter final_suspend() noexcept { return FinalAwaiter{eng_, st_}; }

  void return_void() {}
  void unhandled_exception() { eng_->report_failure(std::current_exception()); }
};

// One-shot FIFO wake-up signal for engine processes.
class Gate {
 public:
  explicit Gate(Engine& eng) : eng_(&eng) {}

  struct Awaiter {
    Gate* g;
    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<> h);
    void await_resume() const noexcept {}
  };
  Awaiter wait() { return Awaiter{this}; }

  // Wakes every process currently waiting; they resume at the present time
  // in wait order.
  void pulse();

 private:
  friend struct Awaiter;
  Engine* eng_;
  std::vector<std::pair<std::coroutine_handle<>, std::uint32_t>> waiters_;
};

// FIFO message queue shared between two engine processes.
template <class T>
class MsgQueue {
 public:
  explicit MsgQueue(Engine& eng, std::string name = {})
      : eng_(&eng), gate_(eng), name_(std::move(name)) {}

  void push(T value) {
    items_.push_back(std::move(value));
    gate_.pulse();
  }

  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }

  struct PopAwaiter {
    MsgQueue* q;
    bool await_ready() const noexcept { return !q->items_.empty(); }
    void await_suspend(std::coroutine_handle<> h) {
      Gate::Awaiter a{&q->gate_};
      a.await_suspend(h);
    }
    T await_resume() {
      T v = std::move(q->items_.front());
      q->items_.pop_front();
      return v;
    }
  };
  PopAwaiter pop() { return PopAwaiter{this}; }

 private:
  Engine* eng_;
  Gate gate_;
  std::string name_;
  std::deque<T> items_;
};

}  // namespace tilesim
