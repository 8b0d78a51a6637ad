"""Brute-force round-robin arbiter, written independently of the package.

Used as the oracle for arbitration equivalence: replay a submission
schedule, pick one winner per bank per cycle by scanning every waiting
request, and record the grants. No shortcuts, no shared code with
poolsim.memsys beyond the documented winner rule: lowest
(core - last_granted - 1) mod ncores, ties broken by submission order.
"""


def naive_round_robin(ncores, nbanks, schedule):
    """Replay *schedule* = [(cycle, core, bank), ...] in submission order.

    Returns the grant list [(cycle, bank, core, req_id), ...] where req_id
    is the index of the submission in *schedule*. Banks are scanned in
    ascending index order each cycle; the run continues until every
    submission has been granted.
    """
    waiting = {b: [] for b in range(nbanks)}
    grants = []
    cursor = [-1] * nbanks
    if not schedule:
        return grants
    by_cycle = {}
    for req_id, (cycle, core, bank) in enumerate(schedule):
        by_cycle.setdefault(cycle, []).append((core, bank, req_id))
    cycle = min(by_cycle)
    remaining = len(schedule)
    while remaining:
        for core, bank, req_id in by_cycle.get(cycle, ()):
            waiting[bank].append((core, req_id))
        for bank in range(nbanks):
            queue = waiting[bank]
            if not queue:
                continue
            best = None
            best_key = None
            for core, req_id in queue:
                key = ((core - cursor[bank] - 1) % ncores, req_id)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (core, req_id)
            queue.remove(best)
            cursor[bank] = best[0]
            grants.append((cycle, bank, best[0], best[1]))
            remaining -= 1
        cycle += 1
    return grants
