"""Progressive scaling: staged training where each stage may enlarge the data,
the model or the input resolution and is guided by the previous stage's
frozen model. Also the two-file checkpoint format.

Checkpoint files::

    <id>.manifest.json   UTF-8 JSON, see CHECKPOINT_SCHEMA
    <id>.params.bin      raw float32 little-endian values, in tensor_index order
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset, dataset_from_specs, random_specs, specs_digest
from .errors import ContractViolation, IntegrityError, PlanValidationError
from .evaluation import evaluate, write_report_csv
from .model import TrackerConfig, init_params, parameter_shapes
from .training import Adapter, DTConfig, Schedule, TeacherHandle, train, write_log_csv

FACTORS = ("data", "model", "resolution")

CHECKPOINT_SCHEMA = {
    "id": "str, '<stage tag>-<first 12 hex of params_digest>'",
    "stage": "int",
    "tracker_config": "TrackerConfig fields",
    "dt_config": "DTConfig fields (schedules as {kind, start, end, drop_fraction})",
    "lineage": "list of checkpoint ids, oldest first, ending with this id",
    "teacher_id": "str or null",
    "dataset_digest": "sha256 of the generating sequence specs",
    "metrics": "EvalReport as dict, or {}",
    "tensor_index": "list of {name, offset, shape, inference}; offset counts float32 elements",
    "params_digest": "sha256 of the .params.bin bytes",
}


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    id: str
    config: TrackerConfig
    params: dict  # name -> float32 ndarray, model first, adapter after
    dt_config: dict = field(default_factory=dict)
    lineage: list = field(default_factory=list)
    teacher_id: str | None = None
    dataset_digest: str = ""
    metrics: dict = field(default_factory=dict)
    stage: int = 0

    @property
    def model_names(self) -> list[str]:
        return list(parameter_shapes(self.config))

    def inference_params(self, requires_grad: bool = False) -> dict:
        """Model parameters only; adapter weights never reach inference."""
        return {k: Tensor(self.params[k], requires_grad=requires_grad, name=k) for k in self.model_names}

    def adapter_params(self) -> dict:
        names = set(self.model_names)
        return {k: v for k, v in self.params.items() if k not in names}

    def blob(self) -> bytes:
        return b"".join(np.ascontiguousarray(self.params[k], dtype="<f4").tobytes() for k in self.ordered_names())

    def ordered_names(self) -> list[str]:
        model = self.model_names
        return model + sorted(k for k in self.params if k not in set(model))

    def digest(self) -> str:
        return hashlib.sha256(self.blob()).hexdigest()

    def tensor_index(self) -> list[dict]:
        out, off = [], 0
        model = set(self.model_names)
        for k in self.ordered_names():
            a = self.params[k]
            out.append({"name": k, "offset": off, "shape": list(a.shape), "inference": k in model})
            off += int(a.size)
        return out

    def manifest(self) -> dict:
        return {
            "id": self.id,
            "stage": self.stage,
            "tracker_config": self.config.to_dict(),
            "dt_config": self.dt_config,
            "lineage": list(self.lineage),
            "teacher_id": self.teacher_id,
            "dataset_digest": self.dataset_digest,
            "metrics": self.metrics,
            "tensor_index": self.tensor_index(),
            "params_digest": self.digest(),
        }


def make_checkpoint(params: dict, config: TrackerConfig, stage_tag: str = "ckpt", **kw) -> Checkpoint:
    arrays = {k: np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float32).copy() for k, v in params.items()}
    ck = Checkpoint("", config, arrays, **kw)
    ck.id = f"{stage_tag}-{ck.digest()[:12]}"
    if not ck.lineage or ck.lineage[-1] != ck.id:
        ck.lineage = list(ck.lineage) + [ck.id]
    return ck


def save_checkpoint(ck: Checkpoint, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{ck.id}.params.bin").write_bytes(ck.blob())
    path = out / f"{ck.id}.manifest.json"
    path.write_text(json.dumps(ck.manifest(), indent=2, sort_keys=True))
    return path


def load_checkpoint(path) -> Checkpoint:
    """Load from a manifest path (or a directory plus id given as ``dir/id``)."""
    path = Path(path)
    if not path.name.endswith(".manifest.json"):
        path = path.with_name(path.name + ".manifest.json")
    man = json.loads(path.read_text(encoding="utf-8"))
    blob_path = path.with_name(path.name.replace(".manifest.json", ".params.bin"))
    raw = blob_path.read_bytes()
    total = sum(int(np.prod(e["shape"])) for e in man["tensor_index"])
    if len(raw) != 4 * total:
        raise IntegrityError(f"{blob_path}: {len(raw)} bytes, index expects {4 * total}")
    if hashlib.sha256(raw).hexdigest() != man["params_digest"]:
        raise IntegrityError(f"{blob_path}: digest mismatch")
    flat = np.frombuffer(raw, dtype="<f4")
    params = {}
    for e in man["tensor_index"]:
        n = int(np.prod(e["shape"]))
        params[e["name"]] = flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float32)
    cfg = TrackerConfig.from_dict(man["tracker_config"])
    return Checkpoint(man["id"], cfg, params, man["dt_config"], man["lineage"], man["teacher_id"],
                      man["dataset_digest"], man["metrics"], man["stage"])


# ---------------------------------------------------------------------------
# plans

@dataclass(frozen=True)
class DataSpec:
    """Training data recipe: named sources of synthetic sequences."""

    sources: tuple = (("synth", 64),)
    seed: int = 0
    length: int = 24
    canvas: int = 64

    @property
    def volume(self) -> int:
        return sum(n for _, n in self.sources)

    def build(self) -> list[Dataset]:
        out = []
        for k, (name, n) in enumerate(self.sources):
            out.append(dataset_from_specs(name, random_specs(n, self.seed + 1000 * k, length=self.length,
                                                             canvas=self.canvas)))
        return out

    def digest(self) -> str:
        specs = []
        for k, (name, n) in enumerate(self.sources):
            specs += random_specs(n, self.seed + 1000 * k, length=self.length, canvas=self.canvas)
        return specs_digest(specs)

    def to_dict(self) -> dict:
        return {"sources": [[n, c] for n, c in self.sources], "seed": self.seed, "length": self.length,
                "canvas": self.canvas}

    @classmethod
    def from_dict(cls, d: dict) -> "DataSpec":
        d = dict(d)
        if "sources" in d:
            d["sources"] = tuple((str(n), int(c)) for n, c in d["sources"])
        return cls(**d)


@dataclass(frozen=True)
class StageSpec:
    index: int
    config: TrackerConfig
    data: DataSpec = DataSpec()
    dt_overrides: dict = field(default_factory=dict)
    teacher: str = "previous"  # "none", "previous" or an explicit checkpoint id
    enlarges: tuple = ()


@dataclass
class StagePlan:
    stages: list
    seed: int = 0
    base: DTConfig = DTConfig()


def _model_key(c: TrackerConfig) -> dict:
    return {"embed_dim": c.embed_dim, "num_layers": c.num_layers, "num_heads": c.num_heads,
            "mlp_ratio": c.mlp_ratio, "head_hidden": c.head_hidden}


def _res_key(c: TrackerConfig) -> dict:
    return {"template_res": c.template_res, "search_res": c.search_res}


def grown_factors(prev: StageSpec | None, cur: StageSpec) -> tuple:
    """Which factors ``cur`` enlarges relative to ``prev``; raises if any shrinks."""
    if prev is None:
        return ()
    grown = []
    checks = (
        ("data", {"volume": prev.data.volume}, {"volume": cur.data.volume}),
        ("model", _model_key(prev.config), _model_key(cur.config)),
        ("resolution", _res_key(prev.config), _res_key(cur.config)),
    )
    for factor, a, b in checks:
        for k in a:
            if b[k] < a[k]:
                raise PlanValidationError(f"stage {cur.index}: {factor} shrinks ({k} {a[k]} -> {b[k]})")
        if any(b[k] > a[k] for k in a):
            grown.append(factor)
    return tuple(grown)


def plan_stages(plan_config: dict | Sequence) -> StagePlan:
    """Validate a plan description (dict with ``stages`` and optional ``seed``/``base``)."""
    if isinstance(plan_config, (list, tuple)):
        plan_config = {"stages": list(plan_config)}
    raw = plan_config.get("stages") or []
    if not raw:
        raise PlanValidationError("a plan needs at least one stage")
    base = plan_config.get("base", DTConfig())
    if isinstance(base, dict):
        base = DTConfig.from_dict(base)
    stages: list[StageSpec] = []
    for i, st in enumerate(raw):
        if isinstance(st, StageSpec):
            spec = replace(st, index=i)
        else:
            st = dict(st)
            cfg = st.get("config", TrackerConfig())
            cfg = TrackerConfig.from_dict(cfg) if isinstance(cfg, dict) else cfg
            data = st.get("data", DataSpec())
            data = DataSpec.from_dict(data) if isinstance(data, dict) else data
            teacher = st.get("teacher", "none" if i == 0 else "previous")
            spec = StageSpec(i, cfg, data, dict(st.get("dt_overrides", {})), teacher,
                             tuple(st.get("enlarges", ())))
        if i == 0 and spec.teacher == "previous":
            spec = replace(spec, teacher="none")
        prev = stages[-1] if stages else None
        grown = grown_factors(prev, spec)
        if spec.enlarges and set(spec.enlarges) != set(grown):
            raise PlanValidationError(
                f"stage {i}: declared enlarged factors {sorted(spec.enlarges)} but config grows {sorted(grown)}")
        bad = set(spec.enlarges) - set(FACTORS)
        if bad:
            raise PlanValidationError(f"stage {i}: unknown factors {sorted(bad)}")
        stages.append(replace(spec, enlarges=grown))
    return StagePlan(stages, int(plan_config.get("seed", 0)), base)


def stage_seed(plan_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([plan_seed, index]).generate_state(1)[0])


def stage_dt_config(plan: StagePlan, spec: StageSpec) -> DTConfig:
    d = plan.base.to_dict()
    d.update(spec.dt_overrides)
    d["seed"] = stage_seed(plan.seed, spec.index)
    cfg = DTConfig.from_dict(d)
    if spec.teacher == "none":
        cfg = replace(cfg, lambda_transfer=Schedule.constant(0.0))
    return cfg


def grow(prev: Checkpoint, spec: StageSpec, seed: int = 0, layer_selection: Sequence[int] = (-1,)):
    """Frozen teacher from ``prev`` and a freshly initialized student at ``spec.config``."""
    a, b = prev.config, spec.config
    for k, v in {**_model_key(a), **_res_key(a)}.items():
        if getattr(b, k) < v:
            raise ContractViolation(f"student {k}={getattr(b, k)} is smaller than the teacher's {v}")
    if b.search_res % b.patch_size or b.template_res % b.patch_size:
        raise ContractViolation("student resolutions not divisible by its patch size")
    teacher = TeacherHandle(prev.inference_params(requires_grad=False), a, checkpoint_id=prev.id)
    teacher.adapter = Adapter(a, b, layer_selection)
    student = init_params(b, seed)
    return teacher, student


class PlanAborted(RuntimeError):
    def __init__(self, stage: int, completed: list, cause: BaseException):
        self.stage, self.completed = stage, completed
        super().__init__(f"stage {stage} failed: {cause!r}")


def run_plan(plan: StagePlan, out_dir=None, bench: Sequence[Dataset] | None = None, progress=None) -> list[Checkpoint]:
    """Execute the stages in order; returns one checkpoint per stage."""
    done: list[Checkpoint] = []
    cache: dict[str, list[Dataset]] = {}
    for spec in plan.stages:
        try:
            ck = _run_stage(plan, spec, done, cache, out_dir, bench, progress)
        except Exception as exc:
            raise PlanAborted(spec.index, done, exc) from exc
        done.append(ck)
    return done


def _run_stage(plan, spec, done, cache, out_dir, bench, progress) -> Checkpoint:
    dt = stage_dt_config(plan, spec)
    key = spec.data.digest()
    if key not in cache:
        cache[key] = spec.data.build()
    datasets = cache[key]
    teacher_ck = None
    if spec.teacher == "previous":
        teacher_ck = done[-1]
    elif spec.teacher != "none":
        matches = [c for c in done if c.id == spec.teacher]
        if matches:
            teacher_ck = matches[0]
        elif out_dir is not None:
            teacher_ck = load_checkpoint(Path(out_dir) / spec.teacher)
        else:
            raise ContractViolation(f"teacher checkpoint {spec.teacher!r} not found")
    seed = stage_seed(plan.seed, spec.index)
    if teacher_ck is None:
        teacher, student = None, init_params(spec.config, seed)
    else:
        teacher, student = grow(teacher_ck, spec, seed, dt.feature_layers)
    res = train(student, teacher, datasets, dt, spec.config, progress=progress)
    params = dict(res.params)
    if res.adapter is not None:
        params.update(res.adapter.params)
    metrics = {}
    if bench:
        with ad.no_grad():
            report = evaluate((res.params, spec.config), bench)
        metrics = report.as_dict()
    lineage = list(teacher_ck.lineage) if teacher_ck is not None else []
    ck = make_checkpoint(params, spec.config, f"stage{spec.index}", dt_config=dt.to_dict(), lineage=lineage,
                         teacher_id=teacher_ck.id if teacher_ck else None, dataset_digest=key,
                         metrics=metrics, stage=spec.index)
    if metrics:
        ck.metrics["checkpoint_id"] = ck.id
    if out_dir is not None:
        save_checkpoint(ck, out_dir)
        write_log_csv(res.log, Path(out_dir) / f"{ck.id}.train.csv")
        if bench:
            report.checkpoint_id = ck.id
            write_report_csv(report, Path(out_dir) / f"{ck.id}.eval.csv")
    return ck


def plan_to_dict(plan: StagePlan) -> dict:
    return {
        "seed": plan.seed,
        "base": plan.base.to_dict(),
        "stages": [{"config": s.config.to_dict(), "data": s.data.to_dict(), "dt_overrides": s.dt_overrides,
                    "teacher": s.teacher, "enlarges": list(s.enlarges)} for s in plan.stages],
    }


