#!/usr/bin/env python3
"""Independent reference implementation of the partitioner's RNG scheme.

Regenerates the golden fixtures in this directory from scratch:

    python3 make_golden_partition.py

It deliberately shares no code with the Rust crate; it re-implements the
documented SplitMix64 scheme (see crates/core/src/rng.rs) step by step so
the fixtures are an independent check on the Rust sampler and partitioner.
"""

import json
import math
import os

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def derive_seed(base, tag):
    return mix64(base ^ mix64(tag ^ GOLDEN))


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next_u64(self):
        self.state = (self.state + GOLDEN) & MASK
        return mix64(self.state)

    def next_f64(self):
        return (self.next_u64() >> 11) * 2.0 ** -53

    def next_open_closed(self):
        return ((self.next_u64() >> 11) + 1) * 2.0 ** -53

    def next_index(self, n):
        return self.next_u64() % n

    def next_normal(self):
        u1 = self.next_open_closed()
        u2 = self.next_f64()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def next_gamma(self, shape):
        if shape < 1.0:
            boost = self.next_gamma(shape + 1.0)
            u = self.next_open_closed()
            return boost * u ** (1.0 / shape)
        d = shape - 1.0 / 3.0
        c = 1.0 / (3.0 * math.sqrt(d))
        while True:
            x = self.next_normal()
            t = 1.0 + c * x
            v = t * t * t
            if v <= 0.0:
                continue
            u = self.next_open_closed()
            x2 = x * x
            if u < 1.0 - 0.0331 * (x2 * x2):
                return d * v
            if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
                return d * v

    def next_dirichlet(self, beta, k):
        gammas = [self.next_gamma(beta) for _ in range(k)]
        total = sum(gammas)
        return [g / total for g in gammas]

    def shuffle(self, items):
        for i in range(len(items) - 1, 0, -1):
            j = self.next_index(i + 1)
            items[i], items[j] = items[j], items[i]


def largest_remainder_counts(proportions, total):
    ideals = [p * total for p in proportions]
    counts = [math.floor(x) for x in ideals]
    assigned = sum(counts)
    order = sorted(
        range(len(proportions)),
        key=lambda k: (-(ideals[k] - math.floor(ideals[k])), k),
    )
    for k in order[: total - assigned]:
        counts[k] += 1
    return counts


def dirichlet_partition(labels, num_clients, beta, seed, max_attempts=100):
    num_classes = max(labels) + 1
    by_class = [[] for _ in range(num_classes)]
    for idx, y in enumerate(labels):
        by_class[y].append(idx)

    for attempt in range(max_attempts):
        rng = SplitMix64(derive_seed(seed, attempt))
        assignments = [[] for _ in range(num_clients)]
        for class_indices in by_class:
            shuffled = list(class_indices)
            rng.shuffle(shuffled)
            props = rng.next_dirichlet(beta, num_clients)
            counts = largest_remainder_counts(props, len(shuffled))
            offset = 0
            for client, count in enumerate(counts):
                assignments[client].extend(shuffled[offset : offset + count])
                offset += count
        if all(assignments):
            return [sorted(a) for a in assignments]
    raise RuntimeError("partition retries exhausted")


def main():
    here = os.path.dirname(os.path.abspath(__file__))

    # Golden manifest: 120 examples, labels i % 4, K=4, beta=0.1, seed=7.
    labels = [i % 4 for i in range(120)]
    assignments = dirichlet_partition(labels, 4, 0.1, 7)
    manifest = {
        "beta": 0.1,
        "seed": 7,
        "num_clients": 4,
        "assignments": assignments,
    }
    with open(os.path.join(here, "partition_k4_b0.1_seed7.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")

    # Bit-exact draw references for the distribution samplers.
    def bits(x):
        import struct

        return struct.unpack("<Q", struct.pack("<d", x))[0]

    normal_rng = SplitMix64(99)
    gamma_small_rng = SplitMix64(123)
    gamma_large_rng = SplitMix64(456)
    dirichlet_rng = SplitMix64(5)
    reference = {
        "normal_seed99": [bits(normal_rng.next_normal()) for _ in range(8)],
        "gamma0.5_seed123": [bits(gamma_small_rng.next_gamma(0.5)) for _ in range(8)],
        "gamma3.0_seed456": [bits(gamma_large_rng.next_gamma(3.0)) for _ in range(8)],
        "dirichlet0.1_k4_seed5": [bits(v) for v in dirichlet_rng.next_dirichlet(0.1, 4)],
    }
    with open(os.path.join(here, "rng_reference.json"), "w") as fh:
        json.dump(reference, fh, indent=2)
        fh.write("\n")

    print("wrote golden fixtures to", here)


if __name__ == "__main__":
    main()
