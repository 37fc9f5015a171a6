"""Pure-Python implementations of the hot loops; the compiled ``_kernels`` mirrors them."""


def failure_enumeration(n_actors, alpha, holder, rnd, group, signer_ptr, signer_idx, share, max_round):
    """Exact expected watchtower payoffs over all 2**n_actors failure configurations.

    Each entry is one statically valid submission: holder actor, round, the
    duplicate group (level + id path) and its per-signer share. In each
    configuration the first round with a surviving, non-clashing submission
    wins; its winner is uniform over that round's valid submissions.

    Returns ``(payoffs per actor, P[no proof included], P[entry included])``.
    """
    n_entries = len(holder)
    n_groups = (max(group) + 1) if n_entries else 0
    by_round = [[e for e in range(n_entries) if rnd[e] == r] for r in range(max_round + 1)]
    weights = [(1.0 - alpha) ** k * alpha ** (n_actors - k) for k in range(n_actors + 1)]
    payoff = [0.0] * n_actors
    p_entry = [0.0] * n_entries
    p_none = 0.0
    counts = [0] * n_groups
    for mask in range(1 << n_actors):
        w = weights[mask.bit_count()]
        if w == 0.0:
            continue
        included = False
        for r in range(1, max_round + 1):
            live = [e for e in by_round[r] if (mask >> holder[e]) & 1]
            if not live:
                continue
            for e in live:
                counts[group[e]] += 1
            valid = [e for e in live if counts[group[e]] == 1]
            for e in live:
                counts[group[e]] = 0
            if not valid:
                continue
            each = w / len(valid)
            for e in valid:
                p_entry[e] += each
                for j in range(signer_ptr[e], signer_ptr[e + 1]):
                    payoff[signer_idx[j]] += each * share[e]
            included = True
            break
        if not included:
            p_none += w
    return payoff, p_none, p_entry


def subset_inclusion(sizes, alpha, depth):
    """P[first message of layer ``depth`` is included], by summing over every failure subset.

    Holders of layers 1..depth are bits of a mask (set = alive); deeper layers
    never act before ``depth`` and marginalise out.
    """
    bounds = []
    start = 0
    for size in sizes[:depth]:
        bounds.append((start, size))
        start += size
    total = start
    target = bounds[depth - 1][0]
    layer_masks = [((1 << size) - 1) << lo for lo, size in bounds]
    weights = [(1.0 - alpha) ** k * alpha ** (total - k) for k in range(total + 1)]
    acc = 0.0
    for mask in range(1 << total):
        if not (mask >> target) & 1:
            continue
        first = next(i for i, lm in enumerate(layer_masks) if mask & lm)
        if first != depth - 1:
            continue
        acc += weights[mask.bit_count()] / (mask & layer_masks[depth - 1]).bit_count()
    return acc


def greatest_fixpoint(succ, init, commit):
    """Iterate f_v <- min(commit_v, init_v + sum of incoming f_u) from f = commit.

    Jacobi sweeps, so every iterate is vertex-wise no larger than the last.
    Returns ``(flows, sweeps)``.
    """
    n = len(succ)
    flows = list(commit)
    sweeps = 0
    while True:
        incoming = [0] * n
        for u in range(n):
            if succ[u] >= 0:
                incoming[succ[u]] += flows[u]
        nxt = [min(commit[v], init[v] + incoming[v]) for v in range(n)]
        sweeps += 1
        if nxt == flows:
            return flows, sweeps
        flows = nxt
