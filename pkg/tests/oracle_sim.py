"""Independent brute-force event checker for the execution simulator.

Implements the same documented scheduling contract as devplace.simulator but
with a different mechanism: instead of a global event heap it repeatedly
scans the whole state for the next event time and processes that instant as a
batch (completions by rank, then arrivals by rank, then dispatch).  Time
arithmetic uses the same expressions, so agreement is expected bit-exactly.
"""

from __future__ import annotations


def oracle_makespan(gg, topo, placement) -> float:
    n = gg.num_groups
    if n == 0:
        return 0.0
    rank = gg.topo_rank
    remaining = [len(gg.in_groups[g]) for g in range(n)]
    out_edges = [[] for _ in range(n)]
    for e in gg.group_edges:
        out_edges[e.src].append(e)
    for g in range(n):
        out_edges[g].sort(key=lambda e: rank[e.dst])

    queued: dict[int, float] = {}        # gid -> ready time (waiting for device)
    running: dict[int, float] = {}       # gid -> finish time
    arrivals: list[tuple[float, int]] = []  # (arrive time, dst gid)
    device_busy = [False] * topo.num_devices
    link_free: dict[tuple[int, int], float] = {}
    done = 0
    makespan = 0.0

    for g in range(n):
        if remaining[g] == 0:
            queued[g] = 0.0

    def dispatch(now):
        for dev in range(topo.num_devices):
            if device_busy[dev]:
                continue
            mine = [g for g in queued if placement[g] == dev]
            if not mine:
                continue
            g = min(mine, key=lambda g: (queued[g], rank[g]))
            del queued[g]
            device_busy[dev] = True
            running[g] = now + gg.groups[g].compute_cost / topo.devices[dev].compute_rate

    dispatch(0.0)
    while done < n:
        candidates = list(running.values()) + [t for t, _ in arrivals]
        assert candidates, "deadlock: nothing running and nothing in flight"
        now = min(candidates)

        finishers = sorted((g for g, t in running.items() if t == now),
                           key=lambda g: rank[g])
        for g in finishers:
            del running[g]
            done += 1
            makespan = max(makespan, now)
            dev = placement[g]
            device_busy[dev] = False
            for e in out_edges[g]:
                dst_dev = placement[e.dst]
                if dst_dev == dev or e.tensor_bytes == 0:
                    arrivals.append((now, e.dst))
                else:
                    link = (dev, dst_dev)
                    begin = max(now, link_free.get(link, 0.0))
                    dur = e.tensor_bytes / topo.bandwidth[dev][dst_dev]
                    link_free[link] = begin + dur
                    arrivals.append((begin + dur, e.dst))

        now_arrivals = sorted((a for a in arrivals if a[0] == now),
                              key=lambda a: rank[a[1]])
        arrivals = [a for a in arrivals if a[0] != now]
        for _, dst in now_arrivals:
            remaining[dst] -= 1
            if remaining[dst] == 0:
                queued[dst] = now

        dispatch(now)
    return makespan
