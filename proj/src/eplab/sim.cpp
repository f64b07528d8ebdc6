// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eplab/sim.hpp"

#include <algorithm>
#include <deque>
#include <queue>

#include "eplab/perf_model.hpp"

namespace eplab {

const char* role_name(Role r) {
  switch (r) {
    case Role::Comm: return "comm";
    case Role::Relay: return "relay";
    case Role::Comp: return "comp";
    case Role::Reduce: return "reduce";
  }
  return "?";
}

std::uint64_t SimTimeline::content_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  auto mixd = [&](double d) {
    std::uint64_t v;
    static_assert(sizeof(v) == sizeof(d));
    __builtin_memcpy(&v, &d, sizeof(v));
    mix(v);
  };
  for (const auto& rank : workers)
    for (const auto& w : rank)
      for (const auto& iv : w) {
        mixd(iv.start);
        mixd(iv.end);
        mix((std::uint64_t)iv.role);
        mix((std::uint64_t)iv.task);
        mix(iv.stall);
      }
  mixd(l_total_sim);
  return h;
}

namespace {

// ---------------------------------------------------------------------------
// shared machinery
// ---------------------------------------------------------------------------

struct Event {
  double t = 0;
  int kind = 0;
  int rank = 0;
  long long a = 0;   // worker / rowgroup id
  long long b = 0;   // epoch for transfer events
  std::uint64_t seq = 0;
};

struct EventCmp {
  bool operator()(const Event& x, const Event& y) const {
    if (x.t != y.t) return x.t > y.t;
    if (x.kind != y.kind) return x.kind > y.kind;
    if (x.rank != y.rank) return x.rank > y.rank;
    if (x.a != y.a) return x.a > y.a;
    return x.seq > y.seq;
  }
};

constexpr int kTransferDone = 0;
constexpr int kCopyDone = 1;
constexpr int kRowgroupFlag = 2;
constexpr int kCompDone = 3;
constexpr int kReduceDone = 4;

// Quasi-static processor sharing of one rank's egress link. All active
// transfers proceed at the same rate, so completion order is fixed at
// start time: a transfer started when `drained` bytes had been served per
// stream finishes when drained reaches start+bytes. Only the front
// transfer needs an event in the heap; epoch guards stale ones.
struct PsLink {
  double beta = 0;
  double per_worker_cap = 0;  // w*beta/w_sat
  double rate = 0;            // current per-transfer rate
  double drained = 0;         // virtual bytes served per stream since t=0
  double last = 0;
  std::uint64_t epoch = 0;
  std::set<std::pair<double, int>> active;  // (finish_virtual, worker)
  bool dirty = false;

  void advance(double t) {
    if (t <= last) return;
    drained += rate * (t - last);
    last = t;
  }
  void start(double t, int worker, double bytes) {
    advance(t);
    active.insert({drained + bytes, worker});
    dirty = true;
  }
  void finish_front(double t) {
    advance(t);
    active.erase(active.begin());
    dirty = true;
  }
  int front_worker() const { return active.begin()->second; }
};

// destination-side expert segment and row-group geometry of one rank
struct Layout {
  int epr = 0;
  int b_m = 0;
  int col_tiles = 0;
  std::vector<long long> recv;      // per local expert
  std::vector<long long> seg_base;  // per local expert
  std::vector<long long> rg_base;   // per local expert: first rowgroup
  std::vector<long long> rg_rows;   // per rowgroup
  long long n_rowgroups = 0;
  long long total_recv = 0;

  long long n_tiles() const { return n_rowgroups * col_tiles; }
  long long rowgroup_of(int e_loc, long long off) const { return rg_base[e_loc] + off / b_m; }
  long long slot_of(int e_loc, long long off) const { return seg_base[e_loc] + off; }
};

Layout make_layout(const GlobalTokenMap& map, int b_m, int col_tiles) {
  Layout lay;
  lay.epr = map.experts_per_rank;
  lay.b_m = b_m;
  lay.col_tiles = col_tiles;
  lay.recv.resize(lay.epr);
  lay.seg_base.resize(lay.epr);
  lay.rg_base.resize(lay.epr);
  for (int e = 0; e < lay.epr; ++e) {
    lay.recv[e] = map.recv_total(map.rank, e);
    lay.seg_base[e] = map.segment_base(map.rank, e);
    lay.rg_base[e] = lay.n_rowgroups;
    long long groups = (lay.recv[e] + b_m - 1) / b_m;
    for (long long g = 0; g < groups; ++g)
      lay.rg_rows.push_back(std::min<long long>(b_m, lay.recv[e] - g * b_m));
    lay.n_rowgroups += groups;
    lay.total_recv += lay.recv[e];
  }
  return lay;
}

std::vector<std::pair<long long, long long>> even_slices(long long n, long long parts) {
  std::vector<std::pair<long long, long long>> out;
  if (parts <= 0) return out;
  long long base = n / parts, rem = n % parts, lo = 0;
  for (long long p = 0; p < parts; ++p) {
    long long len = base + (p < rem ? 1 : 0);
    out.push_back({lo, lo + len});
    lo += len;
  }
  return out;
}

// Contiguous slices balanced by transmissions: every worker moves the same
// number of NVLink sends (+-1). Replicas covered by a relay copy are free
// for the sender, so balancing raw item counts would leave the low-expert
// slices with nearly all the bytes under priority ordering. Falls back to
// the plain even split when the schedule holds no transmissions.
std::vector<std::pair<long long, long long>> transmission_balanced_slices(
    const std::vector<char>& primary, long long parts) {
  long long n = (long long)primary.size();
  long long total = 0;
  for (char p : primary) total += p;
  if (parts <= 0) return {};
  if (total == 0) return even_slices(n, parts);
  std::vector<std::pair<long long, long long>> out;
  long long lo = 0, seen = 0, idx = 0;
  for (long long p = 0; p < parts; ++p) {
    long long want = (total * (p + 1)) / parts;  // primaries covered by slice end
    while (idx < n && seen < want) seen += primary[(size_t)idx++];
    long long hi = (p == parts - 1) ? n : idx;
    out.push_back({lo, hi});
    lo = hi;
  }
  return out;
}

SendSchedule ordered_schedule(const GlobalTokenMap& map, bool naive) {
  if (!naive) return build_send_schedule(map);
  SendSchedule s;
  s.rank = map.rank;
  s.items.reserve((size_t)(map.n_tok * map.topk));
  for (long long t = 0; t < map.n_tok; ++t)
    for (int j = 0; j < map.topk; ++j) {
      const MapEntry& e = map.at(t, j);
      s.items.push_back(SendItem{t, j, e.target_rank, e.local_expert, e.offset});
    }
  return s;
}

struct WorkerState {
  enum class St {
    Free,
    CommSend,
    CommWaitGroup,
    Relay,
    CompWait,
    CompBusy,
    ReduceWait,
    ReduceBusy,
    Done
  };
  St st = St::Free;
  long long task = -1;
  long long cursor = 0;  // item / group / token cursor within the task payload
  double stall_start = 0;
  double busy_start = 0;
  long long pending = -1;  // tile / group / token being waited for
};

struct Sums {
  double busy_comm = 0, busy_relay = 0, busy_comp = 0, busy_reduce = 0;
};

}  // namespace

TaskQueueInfo build_task_list(const MoEShape& shape, const TuneConfig& cfg,
                              const RoutingInstance& routing, int rank) {
  auto maps = build_global_token_map(routing);
  const auto& map = maps[rank];
  Layout lay = make_layout(map, shape.b_m, (int)((2LL * shape.h_inter + shape.b_n - 1) / shape.b_n));
  if (lay.n_tiles() == 0 && lay.total_recv > 0)
    throw ValidationError("zero tiles with nonzero tokens (shape inconsistency)");

  SendSchedule sched = build_send_schedule(map);
  std::vector<char> primary(sched.items.size(), 0);
  if (routing.world > 1) {
    std::map<std::pair<long long, int>, char> sent;
    for (size_t i = 0; i < sched.items.size(); ++i)
      if (sent.emplace(std::make_pair(sched.items[i].token, sched.items[i].dst_rank), 1).second)
        primary[i] = 1;
  }

  TaskQueueInfo tq;
  tq.n_comm = cfg.n_disp;
  tq.n_relay = cfg.n_relay;
  tq.n_comp = lay.n_tiles();
  tq.comm_slices = transmission_balanced_slices(primary, cfg.n_disp);
  tq.relay_ranges = even_slices(lay.n_tiles(), cfg.n_relay);
  return tq;
}

// ---------------------------------------------------------------------------
// Dispatch + GroupGEMM MegaKernel
// ---------------------------------------------------------------------------

namespace {

struct CopyJob {
  int dst = 0;
  long long rowgroup = 0;
  long long slot = 0;
  int relay = 0;
};

struct DispatchRank {
  // source side
  std::vector<SendItem> items;
  std::vector<char> primary;
  std::vector<std::vector<CopyJob>> jobs_of_primary;  // per item
  PsLink ps;
  // destination side
  Layout lay;
  std::vector<long long> rg_count;
  std::vector<double> token_flag;
  std::vector<double> tile_flag;
  std::vector<double> comp_start;
  std::vector<long long> tile_waiter;       // -1 none
  std::vector<long long> relay_of_rg;       // rowgroup -> relay index (or -1)
  std::vector<std::deque<CopyJob>> relay_q;
  std::vector<long long> relay_arrivals_left;
  std::vector<long long> relay_worker;  // relay index -> worker (-1)
  std::vector<char> relay_busy;
  // tasks
  TaskQueueInfo tq;
  long long next_task = 0;
  long long unfinished = 0;
  std::vector<WorkerState> workers;
};

struct DispatchSim {
  const SimParams& p;
  int world;
  double t_tile;   // raw tile time; tau_sync is charged at the flag
  double copy_t;   // relay HBM copy per replica
  std::vector<DispatchRank> ranks;
  std::priority_queue<Event, std::vector<Event>, EventCmp> heap;
  std::uint64_t seq = 0;
  double now = 0;
  double makespan = 0;
  SimTimeline out;
  Sums sums;
  long long total_unfinished = 0;

  explicit DispatchSim(const SimParams& params) : p(params), world(params.routing.world) {}

  void push(double t, int kind, int rank, long long a, long long b) {
    heap.push(Event{std::max(t, now), kind, rank, a, b, seq++});
  }

  void add_interval(int rank, int worker, const Interval& iv) {
    if (iv.end <= iv.start) return;
    out.workers[rank][worker].push_back(iv);
    double d = iv.end - iv.start;
    if (iv.stall) {
      out.total_stall += d;
      if (iv.role == Role::Comp) out.stall_comp += d;
      if (iv.role == Role::Comm) out.stall_comm += d;
    } else {
      switch (iv.role) {
        case Role::Comm: sums.busy_comm += d; break;
        case Role::Relay: sums.busy_relay += d; break;
        case Role::Comp: sums.busy_comp += d; break;
        case Role::Reduce: sums.busy_reduce += d; break;
      }
    }
  }

  void build();
  void run();
  void claim(int rank, int worker);
  void commit_ps(int rank);
  void start_copy(int rank, int relay, int worker);
  void arrival(int rank, long long slot, long long rg);
  void advance_comm(int rank, int worker);
  void finish_task(int rank, int worker);
};

void DispatchSim::commit_ps(int rank) {
  auto& ps = ranks[rank].ps;
  if (!ps.dirty) return;
  ps.dirty = false;
  ps.advance(now);
  ++ps.epoch;
  size_t n = ps.active.size();
  if (n == 0) {
    ps.rate = 0;
    return;
  }
  ps.rate = std::min(ps.per_worker_cap, ps.beta / (double)n);
  double v = ps.active.begin()->first;
  push(ps.last + std::max(0.0, v - ps.drained) / ps.rate, kTransferDone, rank, ps.front_worker(),
       (long long)ps.epoch);
}

void DispatchSim::build() {
  const auto& routing = p.routing;
  auto maps = build_global_token_map(routing);
  int n_sm = p.spec.n_sm;
  int col_tiles = (int)((2LL * p.shape.h_inter + p.shape.b_n - 1) / p.shape.b_n);
  t_tile = calc_gemm_block_time(p.spec, p.shape, p.shape.h_dim, p.cfg.w) - p.spec.tau_sync;
  copy_t = (double)p.shape.token_bytes() /
           effective_bandwidth(1, p.cfg.w, p.spec.bw_hbm, p.spec.w_sat);

  out.world = world;
  out.n_sm = n_sm;
  out.workers.assign(world, std::vector<std::vector<Interval>>(n_sm));
  out.token_flag_time.resize(world);
  out.tile_flag_time.resize(world);
  out.comp_start_time.resize(world);

  ranks.resize(world);
  for (int r = 0; r < world; ++r) {
    DispatchRank& R = ranks[r];
    R.lay = make_layout(maps[r], p.shape.b_m, col_tiles);
    R.rg_count.assign(R.lay.n_rowgroups, 0);
    R.token_flag.assign(R.lay.total_recv, -1.0);
    R.tile_flag.assign(R.lay.n_tiles(), -1.0);
    R.comp_start.assign(R.lay.n_tiles(), -1.0);
    R.tile_waiter.assign(R.lay.n_tiles(), -1);
    R.workers.assign(n_sm, WorkerState{});

    SendSchedule sched = ordered_schedule(maps[r], p.naive_order);
    R.items = std::move(sched.items);
    R.primary.assign(R.items.size(), 0);
    if (world > 1) {
      std::map<std::pair<long long, int>, char> sent;
      for (size_t i = 0; i < R.items.size(); ++i)
        if (sent.emplace(std::make_pair(R.items[i].token, R.items[i].dst_rank), 1).second)
          R.primary[i] = 1;
    }

    R.tq.n_comm = p.cfg.n_disp;
    R.tq.n_relay = p.cfg.n_relay;
    R.tq.n_comp = R.lay.n_tiles();
    R.tq.comm_slices = transmission_balanced_slices(R.primary, p.cfg.n_disp);
    R.tq.relay_ranges = even_slices(R.lay.n_tiles(), p.cfg.n_relay);
    R.unfinished = R.tq.total();
    total_unfinished += R.unfinished;

    R.relay_of_rg.assign(R.lay.n_rowgroups, -1);
    for (long long rg = 0; rg < R.lay.n_rowgroups; ++rg) {
      long long first_tile = rg * col_tiles;
      for (size_t k = 0; k < R.tq.relay_ranges.size(); ++k)
        if (first_tile >= R.tq.relay_ranges[k].first && first_tile < R.tq.relay_ranges[k].second)
          R.relay_of_rg[rg] = (long long)k;
    }
    R.relay_q.resize(p.cfg.n_relay);
    R.relay_arrivals_left.assign(p.cfg.n_relay, 0);
    for (long long rg = 0; rg < R.lay.n_rowgroups; ++rg)
      if (R.relay_of_rg[rg] >= 0) R.relay_arrivals_left[R.relay_of_rg[rg]] += R.lay.rg_rows[rg];
    R.relay_worker.assign(p.cfg.n_relay, -1);
    R.relay_busy.assign(p.cfg.n_relay, 0);

    R.ps.beta = p.spec.bw_nvl;
    R.ps.per_worker_cap = (double)p.cfg.w * p.spec.bw_nvl / p.spec.w_sat;
  }

  // copy jobs hang off their primary; at world size 1 every copy is a relay
  // job enabled at t=0
  for (int r = 0; r < world; ++r) {
    DispatchRank& R = ranks[r];
    R.jobs_of_primary.assign(R.items.size(), {});
    std::map<std::pair<long long, int>, long long> first_item;  // (token, dst) -> item idx
    for (size_t i = 0; i < R.items.size(); ++i) {
      const SendItem& it = R.items[i];
      DispatchRank& D = ranks[it.dst_rank];
      long long rg = D.lay.rowgroup_of(it.dst_expert, it.dst_offset);
      long long slot = D.lay.slot_of(it.dst_expert, it.dst_offset);
      long long relay = D.relay_of_rg[rg];
      CopyJob job{it.dst_rank, rg, slot, (int)relay};
      if (world == 1) {
        if (relay >= 0) D.relay_q[relay].push_back(job);
        continue;
      }
      if (R.primary[i]) {
        first_item.emplace(std::make_pair(it.token, it.dst_rank), (long long)i);
      } else {
        R.jobs_of_primary[first_item.at(std::make_pair(it.token, it.dst_rank))].push_back(job);
      }
    }
  }
}

void DispatchSim::arrival(int rank, long long slot, long long rg) {
  DispatchRank& R = ranks[rank];
  R.token_flag[slot] = now;
  out.l_disp_sim = std::max(out.l_disp_sim, now);
  if (++R.rg_count[rg] == R.lay.rg_rows[rg])
    push(now + p.spec.tau_sync, kRowgroupFlag, rank, rg, 0);
  long long relay = R.relay_of_rg[rg];
  if (relay >= 0) {
    if (--R.relay_arrivals_left[relay] == 0 && R.relay_worker[relay] >= 0 &&
        !R.relay_busy[relay] && R.relay_q[relay].empty()) {
      int w = (int)R.relay_worker[relay];
      R.relay_worker[relay] = -1;
      finish_task(rank, w);
    }
  }
}

void DispatchSim::start_copy(int rank, int relay, int worker) {
  DispatchRank& R = ranks[rank];
  R.relay_busy[relay] = 1;
  R.workers[worker].busy_start = now;
  push(now + copy_t, kCopyDone, rank, worker, relay);
}

void DispatchSim::advance_comm(int rank, int worker) {
  DispatchRank& R = ranks[rank];
  WorkerState& W = R.workers[worker];
  auto [lo, hi] = R.tq.comm_slices[(size_t)W.task];
  long long i = std::max(W.cursor, lo);
  while (i < hi && !R.primary[i]) ++i;
  if (i < hi) {
    W.cursor = i;
    W.st = WorkerState::St::CommSend;
    W.busy_start = now;
    R.ps.start(now, worker, (double)p.shape.token_bytes());
  } else {
    W.cursor = hi;
    finish_task(rank, worker);
  }
}

void DispatchSim::finish_task(int rank, int worker) {
  DispatchRank& R = ranks[rank];
  R.workers[worker].st = WorkerState::St::Free;
  R.workers[worker].task = -1;
  --R.unfinished;
  --total_unfinished;
  makespan = std::max(makespan, now);
  claim(rank, worker);
}

void DispatchSim::claim(int rank, int worker) {
  DispatchRank& R = ranks[rank];
  WorkerState& W = R.workers[worker];
  while (W.st == WorkerState::St::Free) {
    if (R.next_task >= R.tq.total()) {
      W.st = WorkerState::St::Done;
      return;
    }
    long long id = R.next_task++;
    W.task = id;
    if (id < R.tq.n_comm) {
      W.cursor = R.tq.comm_slices[(size_t)id].first;
      advance_comm(rank, worker);  // may finish instantly and loop
    } else if (id < R.tq.n_comm + R.tq.n_relay) {
      long long relay = id - R.tq.n_comm;
      W.st = WorkerState::St::Relay;
      W.pending = relay;
      R.relay_worker[relay] = worker;
      if (!R.relay_q[relay].empty()) {
        start_copy(rank, (int)relay, worker);
      } else if (R.relay_arrivals_left[relay] == 0) {
        R.relay_worker[relay] = -1;
        W.st = WorkerState::St::Free;
        --R.unfinished;
        --total_unfinished;
        continue;
      }
    } else {
      long long tile = id - R.tq.n_comm - R.tq.n_relay;
      if (R.tile_flag[tile] >= 0) {
        W.st = WorkerState::St::CompBusy;
        W.busy_start = now;
        W.pending = tile;
        R.comp_start[tile] = now;
        push(now + t_tile, kCompDone, rank, worker, tile);
      } else {
        W.st = WorkerState::St::CompWait;
        W.stall_start = now;
        W.pending = tile;
        R.tile_waiter[tile] = worker;
      }
    }
  }
}

void DispatchSim::run() {
  build();
  for (int r = 0; r < world; ++r)
    for (int w = 0; w < p.spec.n_sm; ++w)
      if (ranks[r].workers[w].st == WorkerState::St::Free) claim(r, w);
  for (int r = 0; r < world; ++r) commit_ps(r);

  while (total_unfinished > 0) {
    if (heap.empty())
      throw DeadlockError(
          "DeadlockDetected: no runnable event while unfinished tasks remain "
          "(dispatch kernel; check n_disp + n_relay < n_sm)");
    Event ev = heap.top();
    heap.pop();
    if (ev.kind == kTransferDone) {
      auto& ps = ranks[ev.rank].ps;
      if ((std::uint64_t)ev.b != ps.epoch || ps.active.empty()) continue;  // stale
    }
    now = std::max(now, ev.t);
    makespan = std::max(makespan, now);
    DispatchRank& R = ranks[ev.rank];

    switch (ev.kind) {
      case kTransferDone: {
        int worker = R.ps.front_worker();
        WorkerState& W = R.workers[worker];
        R.ps.finish_front(now);
        add_interval(ev.rank, worker, {W.busy_start, now, Role::Comm, W.task, false});
        const SendItem& it = R.items[W.cursor];
        DispatchRank& D = ranks[it.dst_rank];
        long long rg = D.lay.rowgroup_of(it.dst_expert, it.dst_offset);
        long long slot = D.lay.slot_of(it.dst_expert, it.dst_offset);
        arrival(it.dst_rank, slot, rg);
        for (const CopyJob& job : R.jobs_of_primary[W.cursor]) {
          DispatchRank& DD = ranks[job.dst];
          if (job.relay < 0) continue;
          DD.relay_q[job.relay].push_back(job);
          if (DD.relay_worker[job.relay] >= 0 && !DD.relay_busy[job.relay])
            start_copy(job.dst, job.relay, (int)DD.relay_worker[job.relay]);
        }
        ++W.cursor;
        advance_comm(ev.rank, worker);
        break;
      }
      case kCopyDone: {
        int worker = (int)ev.a;
        int relay = (int)ev.b;
        add_interval(ev.rank, worker, {R.workers[worker].busy_start, now, Role::Relay,
                                       R.workers[worker].task, false});
        CopyJob job = R.relay_q[relay].front();
        R.relay_q[relay].pop_front();
        R.relay_busy[relay] = 0;
        arrival(ev.rank, job.slot, job.rowgroup);
        if (!R.relay_q[relay].empty()) {
          if (R.relay_worker[relay] >= 0) start_copy(ev.rank, relay, worker);
        } else if (R.relay_arrivals_left[relay] == 0 && R.relay_worker[relay] >= 0) {
          R.relay_worker[relay] = -1;
          finish_task(ev.rank, worker);
        }
        break;
      }
      case kRowgroupFlag: {
        long long rg = ev.a;
        for (int c = 0; c < R.lay.col_tiles; ++c) {
          long long tile = rg * R.lay.col_tiles + c;
          R.tile_flag[tile] = now;
          long long waiter = R.tile_waiter[tile];
          if (waiter >= 0) {
            R.tile_waiter[tile] = -1;
            WorkerState& W = R.workers[waiter];
            add_interval(ev.rank, (int)waiter, {W.stall_start, now, Role::Comp, W.task, true});
            W.st = WorkerState::St::CompBusy;
            W.busy_start = now;
            R.comp_start[tile] = now;
            push(now + t_tile, kCompDone, ev.rank, waiter, tile);
          }
        }
        break;
      }
      case kCompDone: {
        int worker = (int)ev.a;
        WorkerState& W = R.workers[worker];
        add_interval(ev.rank, worker, {W.busy_start, now, Role::Comp, W.task, false});
        out.l_up_sim = std::max(out.l_up_sim, now);
        finish_task(ev.rank, worker);
        break;
      }
      default: throw std::logic_error("unexpected event kind in dispatch sim");
    }
    for (int r = 0; r < world; ++r) commit_ps(r);
  }

  out.l_total_sim = makespan;
  out.role_busy = {{"comm", sums.busy_comm},
                   {"relay", sums.busy_relay},
                   {"comp", sums.busy_comp},
                   {"reduce", sums.busy_reduce}};
  for (int r = 0; r < world; ++r) {
    out.token_flag_time[r] = std::move(ranks[r].token_flag);
    out.tile_flag_time[r] = std::move(ranks[r].tile_flag);
    out.comp_start_time[r] = std::move(ranks[r].comp_start);
  }
}

}  // namespace

SimTimeline run_dispatch_gemm_sim(const SimParams& params) {
  validate_routing(params.routing);
  DispatchSim sim(params);
  sim.run();
  return std::move(sim.out);
}

// ---------------------------------------------------------------------------
// GroupGEMM + Combine MegaKernel
// ---------------------------------------------------------------------------

namespace {

struct Group {
  int src = 0;
  long long token = 0;
  std::vector<int> slots;       // k indices landing on this hosting rank
  long long gates_left = 0;     // distinct rowgroups still computing
  double ready_time = -1;
};

// Combine comm workers take every n_comb-th group of the tile-aligned
// list: each worker sees early-ready groups immediately and stays loaded
// until the final tile band, like the model's whole-phase reservation.
struct GroupWalk {
  long long start = 0;  // worker's first group
  long long step = 1;   // n_comb
  long long count = 0;  // groups assigned to this worker

  long long at(long long i) const { return start + i * step; }
};

struct CombineRank {
  Layout lay;
  // compute
  std::vector<long long> rg_tiles_left;
  std::vector<double> tile_done;
  std::vector<double> comp_start;
  // groups (this rank as expert host)
  std::vector<Group> groups;
  std::vector<std::vector<long long>> groups_of_rg;  // rowgroup -> group indices
  std::vector<long long> group_waiter;               // group -> comm worker (-1)
  std::vector<GroupWalk> comm_walks;                 // per comm task
  PsLink ps;
  // reduction (this rank as token source)
  std::vector<long long> tok_slots_left;  // per token
  std::vector<double> tok_done;
  std::vector<long long> tok_waiter;  // token -> reduce worker (-1)
  // tasks
  TaskQueueInfo tq;
  long long next_task = 0;
  long long unfinished = 0;
  std::vector<WorkerState> workers;
};

struct CombineSim {
  const SimParams& p;
  int world;
  double t_tile;    // includes tau_sync: the tile sets its completion signal
  double red_tok_t; // per-token reduce cost
  std::vector<CombineRank> ranks;
  std::priority_queue<Event, std::vector<Event>, EventCmp> heap;
  std::uint64_t seq = 0;
  double now = 0;
  double makespan = 0;
  SimTimeline out;
  Sums sums;
  long long total_unfinished = 0;

  explicit CombineSim(const SimParams& params) : p(params), world(params.routing.world) {}

  void push(double t, int kind, int rank, long long a, long long b) {
    heap.push(Event{std::max(t, now), kind, rank, a, b, seq++});
  }
  void add_interval(int rank, int worker, const Interval& iv) {
    if (iv.end <= iv.start) return;
    out.workers[rank][worker].push_back(iv);
    double d = iv.end - iv.start;
    if (iv.stall) {
      out.total_stall += d;
      if (iv.role == Role::Comm) out.stall_comm += d;
      if (iv.role == Role::Reduce) out.stall_reduce += d;
      if (iv.role == Role::Comp) out.stall_comp += d;
    } else {
      switch (iv.role) {
        case Role::Comm: sums.busy_comm += d; break;
        case Role::Relay: sums.busy_relay += d; break;
        case Role::Comp: sums.busy_comp += d; break;
        case Role::Reduce: sums.busy_reduce += d; break;
      }
    }
  }

  void build();
  void run();
  void claim(int rank, int worker);
  void commit_ps(int rank);
  void advance_comm(int rank, int worker);
  void advance_reduce(int rank, int worker);
  void start_group_send(int rank, int worker, long long g);
  void group_arrival(int host, long long g);
  void finish_task(int rank, int worker);
};

void CombineSim::commit_ps(int rank) {
  auto& ps = ranks[rank].ps;
  if (!ps.dirty) return;
  ps.dirty = false;
  ps.advance(now);
  ++ps.epoch;
  size_t n = ps.active.size();
  if (n == 0) {
    ps.rate = 0;
    return;
  }
  ps.rate = std::min(ps.per_worker_cap, ps.beta / (double)n);
  double v = ps.active.begin()->first;
  push(ps.last + std::max(0.0, v - ps.drained) / ps.rate, kTransferDone, rank, ps.front_worker(),
       (long long)ps.epoch);
}

void CombineSim::build() {
  const auto& routing = p.routing;
  auto maps = build_global_token_map(routing);
  int n_sm = p.spec.n_sm;
  int col_tiles = (int)(((long long)p.shape.h_dim + p.shape.b_n - 1) / p.shape.b_n);
  t_tile = calc_gemm_block_time(p.spec, p.shape, p.shape.h_inter, p.cfg.w);
  red_tok_t = (double)p.shape.topk * p.shape.token_bytes() /
              effective_bandwidth(1, p.cfg.w, p.spec.bw_hbm, p.spec.w_sat);

  out.world = world;
  out.n_sm = n_sm;
  out.workers.assign(world, std::vector<std::vector<Interval>>(n_sm));
  out.replica_arrival.assign(world, {});
  out.tile_flag_time.resize(world);
  out.comp_start_time.resize(world);
  out.token_flag_time.resize(world);

  ranks.resize(world);
  for (int r = 0; r < world; ++r) {
    CombineRank& R = ranks[r];
    R.lay = make_layout(maps[r], p.shape.b_m, col_tiles);
    R.rg_tiles_left.assign(R.lay.n_rowgroups, col_tiles);
    R.tile_done.assign(R.lay.n_tiles(), -1.0);
    R.comp_start.assign(R.lay.n_tiles(), -1.0);
    R.workers.assign(n_sm, WorkerState{});
    R.tok_slots_left.assign((size_t)routing.n_tok, routing.topk);
    R.tok_done.assign((size_t)routing.n_tok, -1.0);
    R.tok_waiter.assign((size_t)routing.n_tok, -1);
    out.replica_arrival[r].assign((size_t)(routing.n_tok * routing.topk), -1.0);
    R.ps.beta = p.spec.bw_nvl;
    R.ps.per_worker_cap = (double)p.cfg.w * p.spec.bw_nvl / p.spec.w_sat;
  }

  // group (src, token) replicas by hosting rank; transmission queues are
  // ordered by the last gating rowgroup so sends align with the ascending
  // tile completion order the compute workers follow
  for (int host = 0; host < world; ++host) {
    CombineRank& H = ranks[host];
    H.groups_of_rg.assign(H.lay.n_rowgroups, {});
    std::vector<std::vector<long long>> gating;  // per group: distinct rowgroups
    for (int src = 0; src < world; ++src) {
      const auto& map = maps[src];
      std::vector<std::vector<int>> slots_of_token((size_t)routing.n_tok);
      for (long long t = 0; t < routing.n_tok; ++t)
        for (int j = 0; j < routing.topk; ++j)
          if (map.at(t, j).target_rank == host) slots_of_token[t].push_back(j);
      for (long long t = 0; t < routing.n_tok; ++t) {
        if (slots_of_token[t].empty()) continue;
        Group g;
        g.src = src;
        g.token = t;
        g.slots = slots_of_token[t];
        std::vector<long long> rgs;
        for (int j : g.slots) {
          const MapEntry& e = map.at(t, j);
          rgs.push_back(H.lay.rowgroup_of(e.local_expert, e.offset));
        }
        std::sort(rgs.begin(), rgs.end());
        rgs.erase(std::unique(rgs.begin(), rgs.end()), rgs.end());
        g.gates_left = (long long)rgs.size();
        H.groups.push_back(std::move(g));
        gating.push_back(std::move(rgs));
      }
    }
    std::vector<long long> order(H.groups.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = (long long)i;
    std::sort(order.begin(), order.end(), [&](long long a, long long b) {
      long long ra = gating[(size_t)a].back(), rb = gating[(size_t)b].back();
      if (ra != rb) return ra < rb;
      if (H.groups[(size_t)a].src != H.groups[(size_t)b].src)
        return H.groups[(size_t)a].src < H.groups[(size_t)b].src;
      return H.groups[(size_t)a].token < H.groups[(size_t)b].token;
    });
    std::vector<Group> sorted;
    sorted.reserve(H.groups.size());
    for (long long i : order) {
      long long gi = (long long)sorted.size();
      for (long long rg : gating[(size_t)i]) H.groups_of_rg[rg].push_back(gi);
      sorted.push_back(std::move(H.groups[(size_t)i]));
    }
    H.groups = std::move(sorted);
    H.group_waiter.assign(H.groups.size(), -1);

    H.tq.n_comm = p.cfg.n_comb;
    H.tq.n_comp = H.lay.n_tiles();
    H.tq.n_reduce = p.cfg.n_red;
    long long n_groups = (long long)H.groups.size();
    H.comm_walks.resize((size_t)p.cfg.n_comb);
    for (long long k = 0; k < p.cfg.n_comb; ++k) {
      long long count = k < n_groups ? (n_groups - k + p.cfg.n_comb - 1) / p.cfg.n_comb : 0;
      H.comm_walks[(size_t)k] = GroupWalk{k, p.cfg.n_comb, count};
      H.tq.comm_slices.push_back({0, count});
    }
    H.tq.reduce_ranges = even_slices(routing.n_tok, p.cfg.n_red);
    H.unfinished = H.tq.total();
    total_unfinished += H.unfinished;
  }
}

void CombineSim::group_arrival(int host, long long g) {
  CombineRank& H = ranks[host];
  const Group& grp = H.groups[(size_t)g];
  CombineRank& S = ranks[grp.src];
  out.l_comb_sim = std::max(out.l_comb_sim, now);
  for (int j : grp.slots)
    out.replica_arrival[grp.src][(size_t)(grp.token * p.routing.topk + j)] = now;
  S.tok_slots_left[(size_t)grp.token] -= (long long)grp.slots.size();
  if (S.tok_slots_left[(size_t)grp.token] == 0) {
    S.tok_done[(size_t)grp.token] = now;
    long long waiter = S.tok_waiter[(size_t)grp.token];
    if (waiter >= 0) {
      S.tok_waiter[(size_t)grp.token] = -1;
      WorkerState& W = S.workers[waiter];
      add_interval(grp.src, (int)waiter, {W.stall_start, now, Role::Reduce, W.task, true});
      W.st = WorkerState::St::ReduceBusy;
      W.busy_start = now;
      push(now + red_tok_t, kReduceDone, grp.src, waiter, W.pending);
    }
  }
}

void CombineSim::start_group_send(int rank, int worker, long long cursor) {
  CombineRank& R = ranks[rank];
  WorkerState& W = R.workers[worker];
  W.st = WorkerState::St::CommSend;
  W.busy_start = now;
  W.cursor = cursor;
  R.ps.start(now, worker, (double)p.shape.token_bytes());
}

void CombineSim::advance_comm(int rank, int worker) {
  CombineRank& R = ranks[rank];
  WorkerState& W = R.workers[worker];
  const GroupWalk& walk = R.comm_walks[(size_t)W.task];
  long long i = W.cursor;
  while (true) {
    if (i >= walk.count) {
      finish_task(rank, worker);
      return;
    }
    long long g = walk.at(i);
    if (R.groups[(size_t)g].ready_time < 0) {
      W.cursor = i;
      W.st = WorkerState::St::CommWaitGroup;
      W.stall_start = now;
      W.pending = g;
      R.group_waiter[(size_t)g] = worker;
      return;
    }
    if (world == 1) {
      // no NVLink: the result is already local, hand it to the reducer
      group_arrival(rank, g);
      ++i;
      continue;
    }
    start_group_send(rank, worker, i);
    return;
  }
}

void CombineSim::advance_reduce(int rank, int worker) {
  CombineRank& R = ranks[rank];
  WorkerState& W = R.workers[worker];
  auto [lo, hi] = R.tq.reduce_ranges[(size_t)(W.task - R.tq.n_comm - R.tq.n_comp)];
  long long t = std::max(W.cursor, lo);
  if (t >= hi) {
    finish_task(rank, worker);
    return;
  }
  W.cursor = t;
  if (R.tok_done[(size_t)t] >= 0) {
    W.st = WorkerState::St::ReduceBusy;
    W.busy_start = now;
    W.pending = t;
    push(now + red_tok_t, kReduceDone, rank, worker, t);
  } else {
    W.st = WorkerState::St::ReduceWait;
    W.stall_start = now;
    W.pending = t;
    R.tok_waiter[(size_t)t] = worker;
  }
}

void CombineSim::finish_task(int rank, int worker) {
  CombineRank& R = ranks[rank];
  R.workers[worker].st = WorkerState::St::Free;
  R.workers[worker].task = -1;
  --R.unfinished;
  --total_unfinished;
  makespan = std::max(makespan, now);
  claim(rank, worker);
}

void CombineSim::claim(int rank, int worker) {
  CombineRank& R = ranks[rank];
  WorkerState& W = R.workers[worker];
  while (W.st == WorkerState::St::Free) {
    if (R.next_task >= R.tq.total()) {
      W.st = WorkerState::St::Done;
      return;
    }
    long long id = R.next_task++;
    W.task = id;
    if (id < R.tq.n_comm) {
      W.cursor = 0;  // index into this task's group walk
      advance_comm(rank, worker);  // finishes instantly on an empty walk
    } else if (id < R.tq.n_comm + R.tq.n_comp) {
      long long tile = id - R.tq.n_comm;
      W.st = WorkerState::St::CompBusy;
      W.busy_start = now;
      W.pending = tile;
      R.comp_start[tile] = now;
      push(now + t_tile, kCompDone, rank, worker, tile);
    } else {
      W.cursor = R.tq.reduce_ranges[(size_t)(id - R.tq.n_comm - R.tq.n_comp)].first;
      advance_reduce(rank, worker);
    }
  }
}

void CombineSim::run() {
  build();
  for (int r = 0; r < world; ++r)
    for (int w = 0; w < p.spec.n_sm; ++w)
      if (ranks[r].workers[w].st == WorkerState::St::Free) claim(r, w);
  for (int r = 0; r < world; ++r) commit_ps(r);

  while (total_unfinished > 0) {
    if (heap.empty())
      throw DeadlockError(
          "DeadlockDetected: no runnable event while unfinished tasks remain "
          "(combine kernel; check n_comb < n_sm)");
    Event ev = heap.top();
    heap.pop();
    if (ev.kind == kTransferDone) {
      auto& ps = ranks[ev.rank].ps;
      if ((std::uint64_t)ev.b != ps.epoch || ps.active.empty()) continue;  // stale
    }
    now = std::max(now, ev.t);
    makespan = std::max(makespan, now);
    CombineRank& R = ranks[ev.rank];

    switch (ev.kind) {
      case kTransferDone: {
        int worker = R.ps.front_worker();
        WorkerState& W = R.workers[worker];
        R.ps.finish_front(now);
        add_interval(ev.rank, worker, {W.busy_start, now, Role::Comm, W.task, false});
        group_arrival(ev.rank, R.comm_walks[(size_t)W.task].at(W.cursor));
        ++W.cursor;
        advance_comm(ev.rank, worker);
        break;
      }
      case kCompDone: {
        int worker = (int)ev.a;
        long long tile = ev.b;
        WorkerState& W = R.workers[worker];
        add_interval(ev.rank, worker, {W.busy_start, now, Role::Comp, W.task, false});
        R.tile_done[tile] = now;
        out.l_down_sim = std::max(out.l_down_sim, now);
        long long rg = tile / R.lay.col_tiles;
        if (--R.rg_tiles_left[rg] == 0) {
          for (long long gi : R.groups_of_rg[rg]) {
            Group& g = R.groups[(size_t)gi];
            if (--g.gates_left == 0) {
              g.ready_time = now;
              long long waiter = R.group_waiter[(size_t)gi];
              if (waiter >= 0) {
                R.group_waiter[(size_t)gi] = -1;
                WorkerState& CW = R.workers[waiter];
                add_interval(ev.rank, (int)waiter,
                             {CW.stall_start, now, Role::Comm, CW.task, true});
                if (world == 1) {
                  CW.st = WorkerState::St::Free;
                  advance_comm(ev.rank, (int)waiter);
                } else {
                  start_group_send(ev.rank, (int)waiter, CW.cursor);
                }
              }
            }
          }
        }
        finish_task(ev.rank, worker);
        break;
      }
      case kReduceDone: {
        int worker = (int)ev.a;
        WorkerState& W = R.workers[worker];
        add_interval(ev.rank, worker, {W.busy_start, now, Role::Reduce, W.task, false});
        ++W.cursor;  // continue scanning the same token range
        advance_reduce(ev.rank, worker);
        break;
      }
      default: throw std::logic_error("unexpected event kind in combine sim");
    }
    for (int r = 0; r < world; ++r) commit_ps(r);
  }

  out.l_total_sim = makespan;
  out.role_busy = {{"comm", sums.busy_comm},
                   {"relay", sums.busy_relay},
                   {"comp", sums.busy_comp},
                   {"reduce", sums.busy_reduce}};
  for (int r = 0; r < world; ++r) {
    out.tile_flag_time[r] = std::move(ranks[r].tile_done);
    out.comp_start_time[r] = std::move(ranks[r].comp_start);
    out.token_flag_time[r] = std::move(ranks[r].tok_done);
  }
}

}  // namespace

SimTimeline run_gemm_combine_sim(const SimParams& params) {
  validate_routing(params.routing);
  CombineSim sim(params);
  sim.run();
  return std::move(sim.out);
}

std::pair<SimTimeline, SimTimeline> priority_ablation(const SimParams& params) {
  SimParams prio = params;
  prio.naive_order = false;
  SimParams naive = params;
  naive.naive_order = true;
  return {run_dispatch_gemm_sim(prio), run_dispatch_gemm_sim(naive)};
}

}  // namespace eplab
