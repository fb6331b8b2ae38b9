#include "tilesim/engine.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace tilesim {

const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Compute: return "compute";
    case EventKind::Transfer: return "transfer";
    case EventKind::DramAccess: return "dram";
    case EventKind::Message: return "message";
    case EventKind::ResourceGrant: return "grant";
  }
  return "?";
}

const char* trace_op_name(TraceOp op) {
  switch (op) {
    case TraceOp::Spawn: return "spawn";
    case TraceOp::Fire: return "fire";
    case TraceOp::Acquire: return "acquire";
    case TraceOp::Release: return "release";
    case TraceOp::End: return "end";
    case TraceOp::Note: return "note";
  }
  return "?";
}

Engine::~Engine() {
  // Destroy frames of processes that never ran to completion.
  std::vector<std::coroutine_handle<>> frames;
  frames.reserve(alive_.size());
  for (auto& [id, st] : alive_) {
    if (st->frame) {
      frames.push_back(st->frame);
      st->frame = {};
    }
  }
  for (auto h : frames) h.destroy();
}

std::uint64_t Engine::push_item(SimTime t, EventKind kind, std::uint32_t proc,
                                std::coroutine_handle<> h, bool callback) {
  if (t < clock_) {
    throw SimError("schedule: event at " + t.str() + " is in the past (clock " +
                   clock_.str() + ")");
  }
  QueueItem item;
  item.t = t;
  item.seq = next_seq_++;
  item.kind = kind;
  item.proc = proc;
  item.h = h;
  item.callback = callback;
  queue_.push(item);
  return item.seq;
}

std::uint64_t Engine::schedule(SimTime fire_at, EventKind kind,
                               std::function<void()> fn) {
  std::uint64_t id = push_item(fire_at, kind, current_, {}, true);
  callbacks_.emplace(id, std::move(fn));
  return id;
}

void Engine::cancel(std::uint64_t event_id) { cancelled_[event_id] = true; }

SimTime Engine::run_until_idle() {
  while (!queue_.empty()) {
    QueueItem item = queue_.top();
    queue_.pop();
    if (auto it = cancelled_.find(item.seq); it != cancelled_.end()) {
      cancelled_.erase(it);
      if (item.callback) callbacks_.erase(item.seq);
      continue;
    }
    if (item.t < clock_) {
      throw SimError("engine: clock would move backwards");
    }
    clock_ = item.t;
    trace_.push_back(TraceRecord{clock_.ns, TraceOp::Fire, item.kind, item.proc,
                                 -1, static_cast<std::int64_t>(item.seq)});
    current_ = item.proc;
    if (item.callback) {
      auto it = callbacks_.find(item.seq);
      auto fn = std::move(it->second);
      callbacks_.erase(it);
      fn();
    } else {
      if (auto* st = state_of(item.proc)) {
        st->blocked_on = nullptr;
        st->blocked_detail.clear();
      }
      item.h.resume();
    }
    current_ = 0;
    if (failure_) {
      auto e = failure_;
      failure_ = {};
      std::rethrow_exception(e);
    }
  }
  if (!alive_.empty()) throw_deadlock();
  return clock_;
}

void Engine::throw_deadlock() {
  // Wait-for edges: claimant -> current holder of each requested resource.
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> wait_for;
  for (const detail::Claim* c : pending_claims_) {
    for (const Resource* r : c->resources) {
      if (r->holder() >= 0) {
        wait_for[c->proc].push_back(static_cast<std::uint32_t>(r->holder()));
      }
    }
  }
  std::vector<std::uint32_t> roots;
  for (const auto& [v, edges] : wait_for) roots.push_back(v);
  std::sort(roots.begin(), roots.end());

  std::vector<std::uint32_t> cycle;
  std::unordered_map<std::uint32_t, int> mark;  // 0 new, 1 on stack, 2 done
  std::vector<std::uint32_t> stack;
  std::function<bool(std::uint32_t)> dfs = [&](std::uint32_t v) {
    mark[v] = 1;
    stack.push_back(v);
    if (auto it = wait_for.find(v); it != wait_for.end()) {
      for (std::uint32_t w : it->second) {
        if (mark[w] == 1) {
          auto pos = std::find(stack.begin(), stack.end(), w);
          cycle.assign(pos, stack.end());
          return true;
        }
        if (mark[w] == 0 && dfs(w)) return true;
      }
    }
    stack.pop_back();
    mark[v] = 2;
    return false;
  };
  for (std::uint32_t v : roots) {
    if (mark[v] == 0 && dfs(v)) break;
  }

  std::ostringstream os;
  os << "deadlock: " << alive_.size()
     << " process(es) blocked with an empty event queue";
  if (!cycle.empty()) {
    os << "; cycle:";
    for (std::uint32_t id : cycle) os << " " << process_name(id);
    os << " -> " << process_name(cycle.front());
  }
  os << "; blocked:";
  std::vector<std::uint32_t> ids;
  for (const auto& [id, st] : alive_) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  for (std::uint32_t id : ids) {
    const auto& st = alive_.at(id);
    os << " [" << process_name(id);
    if (st->blocked_on) os << " waits " << st->blocked_on;
    if (!st->blocked_detail.empty()) os << " " << st->blocked_detail;
    os << "]";
  }
  throw DeadlockError(os.str());
}

Resource& Engine::resource(std::uint64_t key, std::string_view name) {
  auto it = resource_keys_.find(key);
  if (it != resource_keys_.end()) return resources_[it->second];
  auto index = static_cast<std::uint32_t>(resources_.size());
  resources_.push_back(Resource(index, std::string(name)));
  resource_keys_.emplace(key, index);
  return resources_[index];
}

bool Engine::submit_claim(detail::Claim* c) {
  if (current_ == 0) {
    throw SimError("claim: resources may only be acquired from a process");
  }
  c->proc = current_;
  c->seq = next_seq_++;
  for (const Resource* r : c->resources) {
    if (r->holder() == c->proc) {
      throw SimError("claim: process " + process_name(c->proc) +
                     " already holds resource " + r->name());
    }
  }
  pending_claims_.push_back(c);
  try_grant_pending();
  return c->granted;
}

void Engine::withdraw_claim(detail::Claim* c) {
  auto it = std::find(pending_claims_.begin(), pending_claims_.end(), c);
  if (it != pending_claims_.end()) pending_claims_.erase(it);
}

void Engine::try_grant_pending() {
  // Single pass in seq order: grants only consume resources, so a claim
  // skipped here cannot become grantable later in the same pass.
  std::vector<detail::Claim*> remaining;
  remaining.reserve(pending_claims_.size());
  for (detail::Claim* c : pending_claims_) {
    bool free = true;
    for (const Resource* r : c->resources) {
      if (r->held()) {
        free = false;
        break;
      }
    }
    if (!free) {
      remaining.push_back(c);
      continue;
    }
    for (Resource* r : c->resources) {
      r->holder_ = c->proc;
      trace_.push_back(TraceRecord{clock_.ns, TraceOp::Acquire,
                                   EventKind::ResourceGrant, c->proc,
                                   static_cast<std::int32_t>(r->index()), 0});
    }
    c->granted = true;
    c->grant_time = clock_;
    if (c->waiter) {
      push_item(clock_, EventKind::ResourceGrant, c->proc, c->waiter, false);
    }
  }
  pending_claims_ = std::move(remaining);
}

void Engine::release(std::span<Resource* const> resources) {
  for (Resource* r : resources) {
    if (r->holder_ != current_) {
      throw SimError("release: process " + process_name(current_) +
                     " does not hold resource " + r->name());
    }
    r->holder_ = -1;
    trace_.push_back(TraceRecord{clock_.ns, TraceOp::Release,
                                 EventKind::ResourceGrant, current_,
                                 static_cast<std::int32_t>(r->index()), 0});
  }
  try_grant_pending();
}

std::uint64_t Engine::register_process(
    std::shared_ptr<detail::ProcessState> st) {
  st->id = next_proc_id_++;
  if (proc_names_.size() <= st->id) proc_names_.resize(st->id + 1);
  proc_names_[st->id] = "p" + std::to_string(st->id);
  alive_.emplace(st->id, st);
  peak_live_ = std::max(peak_live_, alive_.size());
  trace_.push_back(TraceRecord{clock_.ns, TraceOp::Spawn, EventKind::Message,
                               st->id, -1, 0});
  push_item(clock_, EventKind::Message, st->id, st->frame, false);
  return st->id;
}

void Engine::finish_process(const std::shared_ptr<detail::ProcessState>& st) {
  st->finished = true;
  trace_.push_back(TraceRecord{clock_.ns, TraceOp::End, EventKind::Message,
                               st->id, -1, 0});
  for (auto& [h, proc] : st->joiners) {
    push_item(clock_, EventKind::Message, proc, h, false);
  }
  st->joiners.clear();
  alive_.erase(st->id);
}

void Engine::report_failure(std::exception_ptr e) {
  if (!failure_) failure_ = e;
}

detail::ProcessState* Engine::state_of(std::uint32_t id) {
  auto it = alive_.find(id);
  return it == alive_.end() ? nullptr : it->second.get();
}

void Engine::set_blocked(std::uint32_t id, const char* what,
                         std::string detail) {
  if (auto* st = state_of(id)) {
    st->blocked_on = what;
    st->blocked_detail = std::move(detail);
  }
}

void Engine::name_process(const Process& p, std::string name) {
  name_process(p.id(), std::move(name));
}

void Engine::name_process(std::uint32_t id, std::string name) {
  if (proc_names_.size() <= id) proc_names_.resize(id + 1);
  proc_names_[id] = std::move(name);
}

const std::string& Engine::process_name(std::uint32_t id) const {
  static const std::string kNone = "<none>";
  if (id == 0 || id >= proc_names_.size()) return kNone;
  return proc_names_[id];
}

void Engine::note(std::int64_t aux, std::int32_t resource) {
  trace_.push_back(TraceRecord{clock_.ns, TraceOp::Note, EventKind::Message,
                               current_, resource, aux});
}

std::uint64_t Engine::trace_hash() const {
  // FNV-1a over the packed record fields.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (i * 8)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  for (const TraceRecord& r : trace_) {
    mix(static_cast<std::uint64_t>(r.t));
    mix((static_cast<std::uint64_t>(r.op) << 8) |
        static_cast<std::uint64_t>(r.kind));
    mix(r.proc);
    mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(r.resource)));
    mix(static_cast<std::uint64_t>(r.aux));
  }
  return h;
}

void Engine::write_trace(std::ostream& os) const {
  for (const TraceRecord& r : trace_) {
    os << r.t << " " << trace_op_name(r.op) << " " << event_kind_name(r.kind);
    if (r.resource >= 0) {
      os << " " << resources_[static_cast<std::uint32_t>(r.resource)].name();
    } else {
      os << " -";
    }
    os << " " << process_name(r.proc) << " " << r.aux << "\n";
  }
}

void Engine::DelayAwaiter::await_suspend(std::coroutine_handle<> h) {
  eng->push_item(eng->clock_ + dur, kind, eng->current_, h, false);
}

Engine::ClaimAwaiter::~ClaimAwaiter() {
  if (!claim.granted) eng->withdraw_claim(&claim);
}

bool Engine::ClaimAwaiter::await_ready() { return eng->submit_claim(&claim); }

void Engine::ClaimAwaiter::await_suspend(std::coroutine_handle<> h) {
  claim.waiter = h;
  std::string names;
  for (const Resource* r : claim.resources) {
    if (!names.empty()) names += ",";
    names += r->name();
  }
  eng->set_blocked(claim.proc, "resource", std::move(names));
}

void Process::JoinAwaiter::await_suspend(std::coroutine_handle<> h) {
  std::uint32_t waiting = eng->current_process();
  st->joiners.emplace_back(h, waiting);
  eng->set_blocked(waiting, "join",
                   "process " + eng->process_name(st->id));
}

void Gate::Awaiter::await_suspend(std::coroutine_handle<> h) {
  std::uint32_t waiting = g->eng_->current_process();
  g->waiters_.emplace_back(h, waiting);
  g->eng_->set_blocked(waiting, "signal", "");
}

void Gate::pulse() {
  if (waiters_.empty()) return;
  auto waiters = std::move(waiters_);
  waiters_.clear();
  for (auto& [h, proc] : waiters) {
    eng_->push_item(eng_->now(), EventKind::Message, proc, h, false);
  }
}

}  // namespace tilesim
