"""Synthetic block-design dataset with planted state-specific signal regions.

Each run lasts 260s: eight 25s task blocks (two per cognitive state, order
shuffled per run) interleaved with four 15s fixation blocks.  Voxels inside a
state's ellipsoid carry that state's hemodynamically delayed boxcar response;
everything sits on a positive baseline plus white Gaussian noise.  Everything
is reproducible from one seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import hrf_convolve
from .errors import ConfigurationError, InputError
from .model import STATE_NAMES

TASK_BLOCK_S = 25.0
FIXATION_BLOCK_S = 15.0
RUN_DURATION_S = 260.0
TRIALS_PER_BLOCK = 10
TRIAL_S = 2.5
FIXATION = -1

# two task blocks, then fixation, repeated four times
SCHEDULE = (("task", TASK_BLOCK_S), ("task", TASK_BLOCK_S), ("fix", FIXATION_BLOCK_S)) * 4


@dataclass(frozen=True)
class BlockDesign:
    blocks: tuple            # (state_or_-1, onset_s, duration_s) per block
    tr_s: float
    duration_s: float
    n_trs: int
    labels: np.ndarray       # per-TR state, -1 during fixation
    within_block_index: np.ndarray  # per-TR position inside its task block, -1 otherwise

    def task_onsets(self, state):
        return [onset for s, onset, _ in self.blocks if s == state]


def make_block_design(seed, tr_s=0.72, n_states=4):
    """One run's schedule with a seeded permutation of the task block states.

    Every task block contributes the same number of labeled TRs
    (floor(25s/TR)), starting at the first TR at or after its onset, so the
    per-state label counts come out exactly equal.
    """
    if tr_s <= 0:
        raise ConfigurationError(f"tr must be positive, got {tr_s}")
    order = np.repeat(np.arange(n_states), 2)
    rng = np.random.default_rng(seed)
    rng.shuffle(order)
    blocks = []
    onset = 0.0
    task_i = 0
    for kind, dur in SCHEDULE:
        state = int(order[task_i]) if kind == "task" else FIXATION
        blocks.append((state, onset, dur))
        if kind == "task":
            task_i += 1
        onset += dur
    assert onset == RUN_DURATION_S
    n_trs = int(np.floor(RUN_DURATION_S / tr_s))
    labels = np.full(n_trs, FIXATION, dtype=int)
    within = np.full(n_trs, -1, dtype=int)
    per_block = int(np.floor(TASK_BLOCK_S / tr_s))
    for state, block_onset, _ in blocks:
        if state == FIXATION:
            continue
        start = int(np.ceil(block_onset / tr_s - 1e-9))
        stop = min(start + per_block, n_trs)
        labels[start:stop] = state
        within[start:stop] = np.arange(stop - start)
    return BlockDesign(blocks=tuple(blocks), tr_s=tr_s, duration_s=RUN_DURATION_S,
                       n_trs=n_trs, labels=labels, within_block_index=within)


def state_boxcars(design, n_states=4):
    """Per-state stimulus indicators sampled at the TR grid (time containment,
    independent of the label snapping)."""
    t = np.arange(design.n_trs) * design.tr_s
    box = np.zeros((design.n_trs, n_states))
    for state, onset, dur in design.blocks:
        if state == FIXATION:
            continue
        box[(t >= onset) & (t < onset + dur), state] = 1.0
    return box


def state_responses(design, n_states=4):
    """Hemodynamically delayed per-state regressors (peak-normalized HRF)."""
    box = state_boxcars(design, n_states)
    return np.stack([hrf_convolve(box[:, k], design.tr_s) for k in range(n_states)], axis=1)


# ---------------------------------------------------------------------------
# dataset spec
# ---------------------------------------------------------------------------

def default_rois(grid=(24, 28, 20)):
    """Four disjoint ellipsoids (center, radii) at the grid's quadrant
    centers; sizes scale with the grid (default grid: radii (3, 4, 3))."""
    gx, gy, gz = grid
    lo = (gx // 4, gy // 4, gz // 3)
    hi = tuple(g - 1 - c for g, c in zip(grid, lo))
    radii = (max(1, gx // 8), max(1, int(round(gy / 7))),
             max(1, int(round(gz / 6))))
    return {
        0: ((lo[0], lo[1], lo[2]), radii),
        1: ((hi[0], lo[1], lo[2]), radii),
        2: ((lo[0], hi[1], hi[2]), radii),
        3: ((hi[0], hi[1], hi[2]), radii),
    }


@dataclass(frozen=True)
class PhantomSpec:
    grid: tuple = (24, 28, 20)
    voxel_mm: float = 2.0
    tr_s: float = 0.72
    rois: dict = None  # defaults to default_rois(grid)
    amplitude: float = 1.0
    noise_sigma: float = 1.0
    baseline: float = 100.0
    n_train_subjects: int = 8
    n_test_subjects: int = 4
    runs_per_subject: int = 2
    roi_jitter: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.rois is None:
            object.__setattr__(self, "rois", default_rois(self.grid))
        if self.amplitude < 0 or self.noise_sigma < 0:
            raise ConfigurationError("amplitude and noise sigma must be >= 0")
        if self.baseline <= 0:
            raise ConfigurationError("baseline must be positive so the head mask exists")
        if len(self.grid) != 3 or any(g < 2 for g in self.grid):
            raise ConfigurationError(f"grid must be 3 axes of extent >= 2, got {self.grid}")
        for state, (center, radii) in self.rois.items():
            for ax in range(3):
                lo = center[ax] - radii[ax] - self.roi_jitter
                hi = center[ax] + radii[ax] + self.roi_jitter
                if lo < 0 or hi > self.grid[ax] - 1:
                    raise ConfigurationError(
                        f"roi for state {state} (with jitter margin) leaves the grid on axis {ax}")
        masks = [ellipsoid_mask(self.grid, c, r) for c, r in self.rois.values()]
        overlap = np.zeros(self.grid, dtype=int)
        for m in masks:
            overlap += m
        if (overlap > 1).any():
            raise ConfigurationError("rois overlap; planted regions must be disjoint")

    @property
    def n_subjects(self):
        return self.n_train_subjects + self.n_test_subjects


def ellipsoid_mask(grid, center, radii):
    coords = np.indices(grid, dtype=np.float64)
    acc = np.zeros(grid)
    for ax in range(3):
        acc += ((coords[ax] - center[ax]) / radii[ax]) ** 2
    return acc <= 1.0


def roi_masks(spec, jitter=None):
    """Boolean grid per state; `jitter` optionally shifts each center."""
    masks = {}
    for state, (center, radii) in spec.rois.items():
        c = np.asarray(center, dtype=float)
        if jitter is not None:
            c = c + jitter[state]
        masks[state] = ellipsoid_mask(spec.grid, c, radii)
    return masks


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

@dataclass
class RunData:
    volumes: np.ndarray      # (T, X, Y, Z)
    labels: np.ndarray       # per-TR state, -1 fixation
    design: BlockDesign


@dataclass
class SubjectData:
    subject_id: int
    runs: list
    is_train: bool


@dataclass
class PhantomDataset:
    spec: PhantomSpec
    subjects: list
    target_masks: dict       # state -> boolean grid (unjittered ground truth)

    @property
    def train_subjects(self):
        return [s for s in self.subjects if s.is_train]

    @property
    def test_subjects(self):
        return [s for s in self.subjects if not s.is_train]


def generate_phantom(spec=PhantomSpec()):
    """Deterministic dataset: per-subject ROI jitter, per-run block order and
    noise all derive from spec.seed via independent seed streams."""
    root = np.random.SeedSequence(spec.seed)
    subject_seeds = root.spawn(spec.n_subjects)
    n_states = len(spec.rois)
    subjects = []
    for sid in range(spec.n_subjects):
        jitter_seq, *run_seqs = subject_seeds[sid].spawn(1 + spec.runs_per_subject)
        jit_rng = np.random.default_rng(jitter_seq)
        jitter = {state: jit_rng.integers(-spec.roi_jitter, spec.roi_jitter + 1, size=3)
                  for state in sorted(spec.rois)}
        masks = roi_masks(spec, jitter)
        runs = []
        for run_seq in run_seqs:
            design_seed, noise_seed = run_seq.spawn(2)
            design = make_block_design(design_seed, spec.tr_s, n_states)
            responses = state_responses(design, n_states)
            vol = np.full((design.n_trs,) + tuple(spec.grid), spec.baseline)
            for state, mask in masks.items():
                vol[:, mask] += spec.amplitude * responses[:, state][:, None]
            if spec.noise_sigma > 0:
                vol += np.random.default_rng(noise_seed).normal(
                    0.0, spec.noise_sigma, vol.shape)
            runs.append(RunData(volumes=vol, labels=design.labels, design=design))
        subjects.append(SubjectData(subject_id=sid, runs=runs,
                                    is_train=sid < spec.n_train_subjects))
    return PhantomDataset(spec=spec, subjects=subjects,
                          target_masks=roi_masks(spec))


def state_name(state):
    return STATE_NAMES[state] if 0 <= state < len(STATE_NAMES) else f"state{state}"
