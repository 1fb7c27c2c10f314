"""Deterministic multi-domain synthetic benchmark.

The generator builds datasets in which sequence context is provably
necessary: a shared label grammar is rendered into feature space through
per-domain affine transforms, and a configurable number of verb pairs
share bitwise-identical class prototypes. A single-action classifier is
information-theoretically at chance between the two verbs of a pair,
while neighboring actions identify the center exactly.

The grammar is a Markov chain over states arranged in a fixed cycle of
"recipe" chains of four actions:

    [ identifier_r, amb, amb, amb ] [ identifier_{r+1}, amb, amb, amb ] ...

Identifier actions carry unique, unambiguous verbs. The first and last
ambiguous slots of a chain sit next to an identifier, so a 3-long window
resolves them; the middle slot sees identifiers only at distance two, so
it needs a 5-long window. Two oracles computed from generator truth pin
the floor and the ceiling: a Bayes-optimal single-action classifier and
a maximum-a-posteriori context decoder over grammar states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from seqdg.data import ActionRecord, DataError, DatasetSplit, FeatureStore

__all__ = [
    "SynthConfig",
    "Grammar",
    "DomainTransform",
    "SynthTruth",
    "build_recipe_grammar",
    "uniform_grammar",
    "generate",
    "generate_to",
    "load_truth",
    "context_oracle",
    "context_oracle_accuracy",
    "single_action_bayes",
    "bayes_accuracy_sampled",
    "bayes_accuracy_on_store",
]

CHAIN_LENGTH = 4


@dataclass
class SynthConfig:
    """Generator knobs. The verb/noun counts are tied to the number of
    ambiguous pairs by the chain layout and are validated together."""

    n_source_domains: int = 4
    n_target_domains: int = 1
    n_ambiguous_pairs: int = 9
    n_verbs: int = 24
    n_nouns: int = 15
    videos_per_domain: int = 3
    actions_per_video: int = 80
    d_v: int = 64
    d_t: int = 64
    clips_per_action: int = 4
    domain_shift: float = 0.2
    offset_shift: float = 0.1
    noise_sigma: float = 0.08
    context_margin: float = 30.0   # required oracle-over-Bayes gap, in points
    seed: int = 0

    def validate(self) -> list[str]:
        errs = []
        if self.n_source_domains < 1:
            errs.append("need at least one source domain")
        if self.n_target_domains < 0:
            errs.append("n_target_domains must be >= 0")
        p = self.n_ambiguous_pairs
        if p < 0:
            errs.append("n_ambiguous_pairs must be >= 0")
        elif p > 0:
            if p % 3 != 0:
                errs.append(f"n_ambiguous_pairs must be a multiple of 3 "
                            f"(3 per chain pair), got {p}")
            else:
                m = p // 3
                if self.n_verbs != 8 * m:
                    errs.append(f"with {p} ambiguous pairs n_verbs must be {8 * m}, "
                                f"got {self.n_verbs}")
                if self.n_nouns != 5 * m:
                    errs.append(f"with {p} ambiguous pairs n_nouns must be {5 * m}, "
                                f"got {self.n_nouns}")
        else:
            if self.n_verbs < CHAIN_LENGTH or self.n_verbs % CHAIN_LENGTH != 0:
                errs.append(f"with no ambiguous pairs n_verbs must be a positive "
                            f"multiple of {CHAIN_LENGTH}, got {self.n_verbs}")
            if self.n_nouns < 1:
                errs.append("n_nouns must be >= 1")
        if self.videos_per_domain < 1 or self.actions_per_video < 1:
            errs.append("videos_per_domain and actions_per_video must be >= 1")
        if self.d_v < 2 or self.d_v % 2 != 0:
            errs.append(f"d_v must be even and >= 2 (verb half + noun half), "
                        f"got {self.d_v}")
        if self.clips_per_action < 1:
            errs.append("clips_per_action must be >= 1")
        if self.noise_sigma < 0 or self.domain_shift < 0 or self.offset_shift < 0:
            errs.append("noise_sigma, domain_shift and offset_shift must be >= 0")
        return errs

    def check(self) -> "SynthConfig":
        errs = self.validate()
        if errs:
            raise DataError("invalid synth config: " + "; ".join(errs))
        return self

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d).check()


@dataclass
class Grammar:
    """First-order Markov chain over states, each emitting one
    (verb, noun) action label."""

    transitions: np.ndarray   # (S, S), row-stochastic
    verbs: np.ndarray         # (S,)
    nouns: np.ndarray         # (S,)
    start: np.ndarray         # (S,)

    @property
    def n_states(self) -> int:
        return self.verbs.size

    def labels(self) -> list[tuple[int, int]]:
        return [(int(v), int(n)) for v, n in zip(self.verbs, self.nouns)]

    def label_counts(self) -> dict[tuple[int, int], int]:
        counts: dict[tuple[int, int], int] = {}
        for lab in self.labels():
            counts[lab] = counts.get(lab, 0) + 1
        return counts

    def walk(self, length: int, rng) -> np.ndarray:
        states = np.empty(length, dtype=np.int64)
        state = int(rng.choice(self.n_states, p=self.start))
        for t in range(length):
            states[t] = state
            state = int(rng.choice(self.n_states, p=self.transitions[state]))
        return states

    def to_dict(self) -> dict:
        return {"transitions": self.transitions.tolist(),
                "verbs": self.verbs.tolist(), "nouns": self.nouns.tolist(),
                "start": self.start.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Grammar":
        return cls(transitions=np.asarray(d["transitions"], dtype=np.float64),
                   verbs=np.asarray(d["verbs"], dtype=np.int64),
                   nouns=np.asarray(d["nouns"], dtype=np.int64),
                   start=np.asarray(d["start"], dtype=np.float64))


def build_recipe_grammar(config: SynthConfig) -> tuple[Grammar, list[tuple[int, int]]]:
    """The default cyclic grammar plus the list of ambiguous verb pairs.

    Verb ids: pair p occupies verbs (2p, 2p+1); identifier verbs follow.
    Noun ids: pair p uses noun p (both pair members, so the noun never
    leaks the verb); identifier slots use the remaining nouns.
    """
    config.check()
    p = config.n_ambiguous_pairs
    if p > 0:
        m = p // 3
        n_chains = 2 * m
        pairs = [(2 * q, 2 * q + 1) for q in range(p)]
        verbs, nouns = [], []
        for chain in range(n_chains):
            chain_pair, side = divmod(chain, 2)
            verbs.append(2 * p + chain)            # identifier verb
            nouns.append(p + chain)                # identifier noun
            for slot in range(3):
                q = 3 * chain_pair + slot
                verbs.append(2 * q + side)         # pair member A or B
                nouns.append(q)                    # shared pair noun
    else:
        pairs = []
        n_chains = config.n_verbs // CHAIN_LENGTH
        verbs = list(range(config.n_verbs))
        nouns = [i % config.n_nouns for i in range(config.n_verbs)]
    n_states = n_chains * CHAIN_LENGTH
    transitions = np.zeros((n_states, n_states))
    for s in range(n_states):
        transitions[s, (s + 1) % n_states] = 1.0
    start = np.full(n_states, 1.0 / n_states)
    grammar = Grammar(transitions=transitions,
                      verbs=np.asarray(verbs, dtype=np.int64),
                      nouns=np.asarray(nouns, dtype=np.int64), start=start)
    return grammar, pairs


def uniform_grammar(verbs, nouns) -> Grammar:
    """Every state equally likely to follow every state; context carries
    no information."""
    verbs = np.asarray(verbs, dtype=np.int64)
    n = verbs.size
    return Grammar(transitions=np.full((n, n), 1.0 / n), verbs=verbs,
                   nouns=np.asarray(nouns, dtype=np.int64),
                   start=np.full(n, 1.0 / n))


@dataclass
class DomainTransform:
    """Feature-space stand-in for a new environment: rotation, per-axis
    scaling, and an offset."""

    rotation: np.ndarray   # (D, D) orthogonal
    scaling: np.ndarray    # (D,)
    offset: np.ndarray     # (D,)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x * self.scaling) @ self.rotation.T + self.offset

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "scaling": self.scaling.tolist(),
                "offset": self.offset.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainTransform":
        return cls(rotation=np.asarray(d["rotation"]), scaling=np.asarray(d["scaling"]),
                   offset=np.asarray(d["offset"]))


def _domain_transform(dim: int, shift: float, offset_shift: float, rng) -> DomainTransform:
    if shift == 0.0:
        rotation = np.eye(dim)
        scaling = np.ones(dim)
    else:
        perturb = rng.standard_normal((dim, dim)) / np.sqrt(dim)
        rotation, _ = np.linalg.qr(np.eye(dim) + shift * perturb)
        scaling = 1.0 + 0.2 * shift * rng.uniform(-1.0, 1.0, dim)
    offset = offset_shift * rng.standard_normal(dim)
    return DomainTransform(rotation=rotation, scaling=scaling, offset=offset)


@dataclass
class SynthTruth:
    """Everything an oracle needs: grammar, prototypes, transforms, noise."""

    config: SynthConfig
    grammar: Grammar
    pairs: list[tuple[int, int]]
    verb_protos: np.ndarray            # (n_verbs, d_v/2)
    noun_protos: np.ndarray            # (n_nouns, d_v/2)
    transforms: dict[str, DomainTransform]

    def prototype(self, verb: int, noun: int) -> np.ndarray:
        return np.concatenate([self.verb_protos[verb], self.noun_protos[noun]])

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "grammar": self.grammar.to_dict(),
                "pairs": [list(p) for p in self.pairs],
                "verb_protos": self.verb_protos.tolist(),
                "noun_protos": self.noun_protos.tolist(),
                "transforms": {k: v.to_dict() for k, v in self.transforms.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthTruth":
        return cls(config=SynthConfig.from_dict(d["config"]),
                   grammar=Grammar.from_dict(d["grammar"]),
                   pairs=[tuple(p) for p in d["pairs"]],
                   verb_protos=np.asarray(d["verb_protos"]),
                   noun_protos=np.asarray(d["noun_protos"]),
                   transforms={k: DomainTransform.from_dict(v)
                               for k, v in d["transforms"].items()})


def load_truth(path) -> SynthTruth:
    return SynthTruth.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# generation


def generate(config: SynthConfig) -> tuple[FeatureStore, SynthTruth]:
    """Sample the full multi-domain dataset. Deterministic per seed."""
    config = config.check()
    root = np.random.SeedSequence(config.seed)
    proto_rng = np.random.default_rng(root.spawn(1)[0])
    grammar, pairs = build_recipe_grammar(config)

    half = config.d_v // 2
    verb_protos = proto_rng.standard_normal((config.n_verbs, half))
    for a, b in pairs:
        verb_protos[b] = verb_protos[a]           # bitwise-shared prototypes
    noun_protos = proto_rng.standard_normal((config.n_nouns, half))

    domain_ids = ([f"S{i}" for i in range(config.n_source_domains)]
                  + [f"T{i}" for i in range(config.n_target_domains)])
    transforms: dict[str, DomainTransform] = {}
    records: list[ActionRecord] = []
    blobs: list[np.ndarray] = []
    offset = 0
    action_id = 0
    for d_index, domain in enumerate(domain_ids):
        domain_seq = np.random.SeedSequence((config.seed, 1, d_index))
        t_rng = np.random.default_rng(domain_seq.spawn(1)[0])
        transforms[domain] = _domain_transform(config.d_v, config.domain_shift,
                                               config.offset_shift, t_rng)
        for v_index in range(config.videos_per_domain):
            vid_rng = np.random.default_rng(
                np.random.SeedSequence((config.seed, 2, d_index, v_index)))
            states = grammar.walk(config.actions_per_video, vid_rng)
            for t, state in enumerate(states):
                verb = int(grammar.verbs[state])
                noun = int(grammar.nouns[state])
                proto = np.concatenate([verb_protos[verb], noun_protos[noun]])
                base = transforms[domain].apply(proto)
                clips = base + config.noise_sigma * vid_rng.standard_normal(
                    (config.clips_per_action, config.d_v))
                blobs.append(clips.astype("<f4").reshape(-1))
                records.append(ActionRecord(
                    action_id=action_id, video_id=f"{domain}_v{v_index}",
                    domain_id=domain, verb=verb, noun=noun,
                    narration=(verb, config.n_verbs + noun), temporal_index=t,
                    blob_offset=offset, n_clips=config.clips_per_action))
                action_id += 1
                offset += config.clips_per_action * config.d_v
    visual = np.concatenate(blobs) if blobs else np.empty(0, dtype="<f4")
    split = DatasetSplit(source=tuple(f"S{i}" for i in range(config.n_source_domains)),
                         target=tuple(f"T{i}" for i in range(config.n_target_domains)))
    vocab = [f"verb{v}" for v in range(config.n_verbs)] + \
            [f"noun{n}" for n in range(config.n_nouns)]
    meta = {"name": f"synth-{config.seed}", "d_v": config.d_v, "d_t": config.d_t,
            "clips_per_action": config.clips_per_action}
    store = FeatureStore(meta, records, vocab, split, visual.astype("<f4"))
    truth = SynthTruth(config=config, grammar=grammar, pairs=pairs,
                       verb_protos=verb_protos, noun_protos=noun_protos,
                       transforms=transforms)
    return store, truth


def generate_to(config: SynthConfig, directory) -> Path:
    """Generate and persist the dataset plus the generator-truth file."""
    directory = Path(directory)
    store, truth = generate(config)
    manifest = store.save(directory)
    (directory / "generator_truth.json").write_text(
        json.dumps(truth.to_dict(), sort_keys=True), encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# oracles


def context_oracle(labels, grammar: Grammar, center: int,
                   padding=None) -> tuple[int, int]:
    """MAP center label given the neighbors' labels under the grammar.

    `labels` are the window's (verb, noun) pairs; the center entry is
    ignored (it is the prediction target) and padded slots, which
    replicate edge actions, are dropped. Ties break toward the smallest
    (verb, noun) pair so a uniform grammar scores exactly chance on
    balanced ambiguous samples.
    """
    if padding is None:
        padding = [False] * len(labels)
    keep = [i for i, pad in enumerate(padding) if not pad]
    obs = [labels[i] for i in keep]
    pos = keep.index(center)

    n = grammar.n_states
    match = np.ones((len(obs), n))
    for t, (verb, noun) in enumerate(obs):
        if t == pos:
            continue
        match[t] = (grammar.verbs == verb) & (grammar.nouns == noun)
    alpha = grammar.start * match[0]
    alphas = [alpha]
    for t in range(1, len(obs)):
        alpha = (alpha @ grammar.transitions) * match[t]
        alphas.append(alpha)
    beta = np.ones(n)
    betas = [beta]
    for t in range(len(obs) - 2, -1, -1):
        beta = grammar.transitions @ (match[t + 1] * beta)
        betas.append(beta)
    betas.reverse()
    posterior = alphas[pos] * betas[pos]
    total = posterior.sum()
    if total <= 0.0:
        posterior = np.ones(n)  # window impossible under the grammar
    scores: dict[tuple[int, int], float] = {}
    for s in range(n):
        lab = (int(grammar.verbs[s]), int(grammar.nouns[s]))
        scores[lab] = scores.get(lab, 0.0) + float(posterior[s])
    top = max(scores.values())
    # ties resolve to the smallest (verb, noun) pair
    return min(lab for lab, score in scores.items() if score == top)


def context_oracle_accuracy(windows, grammar: Grammar) -> float:
    hits = 0
    for win in windows:
        labels = [r.label for r in win.records]
        pred = context_oracle(labels, grammar, win.center, win.padding)
        hits += pred == win.center_record.label
    return 100.0 * hits / len(windows)


def single_action_bayes(x: np.ndarray, domain: str, truth: SynthTruth,
                        sigma_eff: float) -> tuple[int, int]:
    """Bayes-optimal center prediction from one aggregated feature vector,
    computed from the generator's own densities. Ties break toward the
    smallest label, which scores one pair side at 100% and the other at 0%."""
    transform = truth.transforms[domain]
    counts = truth.grammar.label_counts()
    best_lab, best_score = None, None
    for lab in sorted(counts):
        mean = transform.apply(truth.prototype(*lab))
        sq = float(((x - mean) ** 2).sum())
        if sigma_eff > 0:
            score = np.log(counts[lab]) - sq / (2.0 * sigma_eff ** 2)
        else:
            score = -sq  # zero noise degenerates to nearest prototype
        if best_score is None or score > best_score:
            best_lab, best_score = lab, score
    return best_lab


def _sigma_eff(truth: SynthTruth) -> float:
    # evaluation aggregates by averaging all clips, shrinking the noise
    return truth.config.noise_sigma / np.sqrt(truth.config.clips_per_action)


def bayes_accuracy_sampled(truth: SynthTruth, n_samples: int, seed: int = 0,
                           only_ambiguous: bool = False) -> float:
    """Accuracy of the Bayes single-action oracle on fresh samples drawn
    from the generator's densities (uniform over states and domains)."""
    rng = np.random.default_rng(seed)
    grammar = truth.grammar
    ambiguous = {v for pair in truth.pairs for v in pair}
    states = [s for s in range(grammar.n_states)
              if not only_ambiguous or int(grammar.verbs[s]) in ambiguous]
    if not states:
        raise DataError("no states match the requested sample filter")
    domains = sorted(truth.transforms)
    sigma = _sigma_eff(truth)
    hits = 0
    for _ in range(n_samples):
        s = states[int(rng.integers(len(states)))]
        domain = domains[int(rng.integers(len(domains)))]
        lab = (int(grammar.verbs[s]), int(grammar.nouns[s]))
        mean = truth.transforms[domain].apply(truth.prototype(*lab))
        x = mean + sigma * rng.standard_normal(truth.config.d_v)
        hits += single_action_bayes(x, domain, truth, sigma) == lab
    return 100.0 * hits / n_samples


def bayes_accuracy_on_store(store: FeatureStore, truth: SynthTruth) -> float:
    """Bayes single-action accuracy over the stored dataset (all clips
    averaged per action)."""
    sigma = _sigma_eff(truth)
    hits = 0
    for rec in store.records:
        x = store.clips(rec).astype(np.float64).mean(axis=0)
        hits += single_action_bayes(x, rec.domain_id, truth, sigma) == rec.label
    return 100.0 * hits / len(store.records)
