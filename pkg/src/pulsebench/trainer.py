"""Training loop and the segment-level evaluation protocol."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .baselines import BASELINES
from .errors import EmptyDataset, NoSpectralPeak, NonfiniteLoss, ShapeMismatch
from .ingest import DatasetIndex, Record, RecordDescriptor, load_record
from .loss import multitask_terms
from .metrics import BlandAltmanStats, MetricsReport, bland_altman, error_stats, video_level_hr
from .model import Checkpoint, ModelConfig, RFaceNet
from .preprocess import FrameClip, make_clip, segment_for_eval, window_starts
from .spectral import DEFAULT_BAND, HrBand, estimate_hr

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-5
    weight_decay: float = 5e-5
    epochs: int = 60
    seed: int = 0
    # candidate window starts are spaced by `stride`; each epoch draws
    # `clips_per_record` of them per training record
    stride: int = 32
    clips_per_record: int = 1
    val_fraction: float = 0.2
    val_every: int = 1
    target_seconds: float = 8.0
    early_stop_mae: float | None = None
    early_stop_acc: float | None = None
    device: str = "cpu"
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.epochs < 0 or self.stride < 1 or self.clips_per_record < 1 or self.val_every < 1:
            raise ValueError("epochs, stride, clips_per_record and val_every must be positive")


HISTORY_COLUMNS = ("epoch", "loss", "bvp_term", "hr_term", "id_term", "sigma1", "sigma2", "sigma3",
                   "mae", "id_acc", "val_mae", "val_id_acc", "seconds")


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row[k] for k in HISTORY_COLUMNS})
        return path

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        with open(path, newline="") as fh:
            rows = [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()}
                    for r in csv.DictReader(fh)]
        return cls(rows)


@dataclass
class LoadedRecord:
    record: Record
    identity: int
    bvp: np.ndarray

    @classmethod
    def from_descriptor(cls, desc: RecordDescriptor) -> "LoadedRecord":
        rec = load_record(desc.path)
        return cls(rec, desc.identity, rec.bvp_at_video_rate())

    def clip(self, start: int, length: int, band: HrBand = DEFAULT_BAND) -> FrameClip:
        return make_clip(self.record, start, length, self.identity, self.bvp, band)


def load_records(dataset: DatasetIndex | Sequence[RecordDescriptor]) -> list[LoadedRecord]:
    descs = dataset.records if isinstance(dataset, DatasetIndex) else list(dataset)
    return [LoadedRecord.from_descriptor(d) for d in descs]


def split_records(dataset: DatasetIndex, val_fraction: float, seed: int):
    """Hold out ``val_fraction`` of each identity's records.

    Every identity keeps at least one training record, so the classifier
    sees all classes.
    """
    rng = np.random.default_rng([seed, 7919])
    by_id: dict[int, list[RecordDescriptor]] = {}
    for d in dataset.records:
        by_id.setdefault(d.identity, []).append(d)
    train, val = [], []
    for ident in sorted(by_id):
        items = by_id[ident]
        n_val = 0
        if val_fraction > 0 and len(items) > 1:
            n_val = min(len(items) - 1, max(1, round(val_fraction * len(items))))
        order = rng.permutation(len(items))
        val += [items[i] for i in sorted(order[:n_val])]
        train += [items[i] for i in sorted(order[n_val:])]
    return dataset.subset(train), dataset.subset(val)


def _check_resolution(config: ModelConfig, record: Record):
    _, c, h, w = config.input_shape
    if record.frames.shape[1:] != (c, h, w):
        raise ShapeMismatch(
            f"model expects {c}x{h}x{w} frames, record {record.path} has "
            f"{'x'.join(map(str, record.frames.shape[1:]))}"
        )


# ---------------------------------------------------------------- prediction

class ModelPredictor:
    """Runs the network on evaluation segments."""

    def __init__(self, model: RFaceNet, device: str = "cpu"):
        self.model = model.to(device).eval()
        self.device = device
        self.dtype = next(model.parameters()).dtype

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint | str | Path, device: str = "cpu"):
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = Checkpoint.load(checkpoint)
        return cls(checkpoint.build_model(), device)

    def check(self, record: Record):
        _check_resolution(self.model.config, record)

    @torch.no_grad()
    def __call__(self, clips: list[FrameClip]):
        bvps, ids = [None] * len(clips), [None] * len(clips)
        by_len: dict[int, list[int]] = {}
        for i, c in enumerate(clips):
            by_len.setdefault(c.num_frames, []).append(i)
        for idx in by_len.values():
            x = torch.from_numpy(np.stack([clips[i].data for i in idx])).to(self.device, self.dtype)
            out = self.model(x)
            pred_ids = out.id_logits.argmax(dim=1).cpu().numpy()
            for j, i in enumerate(idx):
                bvps[i] = out.bvp[j].double().cpu().numpy()
                ids[i] = int(pred_ids[j])
        return bvps, ids


class BaselinePredictor:
    def __init__(self, method: str):
        if method not in BASELINES:
            raise ValueError(f"unknown baseline '{method}', choose from {sorted(BASELINES)}")
        self.method = method
        self.fn = BASELINES[method]

    def check(self, record: Record):
        pass

    def __call__(self, clips: list[FrameClip]):
        return [self.fn(c.raw, c.fps).values for c in clips], [None] * len(clips)


class GroundTruthPredictor:
    """Returns the true BVP; the evaluation protocol must then score MAE 0."""

    def check(self, record: Record):
        pass

    def __call__(self, clips: list[FrameClip]):
        return [np.asarray(c.bvp) for c in clips], [None] * len(clips)


@dataclass
class RecordResult:
    path: str
    identity: int
    gt_hr: float
    pred_hr: float
    segment_hrs: list[float]
    segment_ids: list[int | None]
    start_frames: list[int]
    bvp: list[np.ndarray] = field(repr=False, default_factory=list)


@dataclass
class EvalResult:
    report: MetricsReport
    bland_altman: BlandAltmanStats | None
    id_acc: float
    records: list[RecordResult]


def evaluate_records(predictor: Callable, records: list[LoadedRecord], target_seconds: float = 8.0,
                     band: HrBand = DEFAULT_BAND, keep_bvp: bool = False) -> EvalResult:
    """Segment each record, predict, average segment HRs, score against the record HR."""
    results = []
    correct = total = 0
    for lr in records:
        if hasattr(predictor, "check"):
            predictor.check(lr.record)
        clips = segment_for_eval(lr.record, target_seconds, lr.identity, band)
        bvps, ids = predictor(clips)
        seg_hrs = []
        for clip, bvp in zip(clips, bvps):
            try:
                seg_hrs.append(estimate_hr(bvp, clip.fps, band))
            except NoSpectralPeak:
                log.warning("no spectral peak in segment at frame %d of %s", clip.start, lr.record.path)
        pred = video_level_hr(seg_hrs) if seg_hrs else math.nan
        gt = lr.record.hr_bpm
        if gt is None:
            gt = video_level_hr([c.hr_bpm for c in clips])
        for i in ids:
            if i is not None:
                total += 1
                correct += int(i == lr.identity)
        results.append(RecordResult(
            path=str(lr.record.path), identity=lr.identity, gt_hr=float(gt), pred_hr=float(pred),
            segment_hrs=seg_hrs, segment_ids=list(ids), start_frames=[c.start for c in clips],
            bvp=list(bvps) if keep_bvp else [],
        ))
    if not results:
        raise EmptyDataset("nothing to evaluate")
    preds = [r.pred_hr for r in results]
    gts = [r.gt_hr for r in results]
    report = error_stats(preds, gts, strict=False)
    ba = bland_altman(preds, gts) if len(results) >= 2 else None
    return EvalResult(report, ba, correct / total if total else math.nan, results)


def evaluate(checkpoint, dataset: DatasetIndex, target_seconds: float = 8.0) -> MetricsReport:
    """Video-level HR metrics of a checkpoint (or any predictor callable) on a dataset."""
    if isinstance(checkpoint, (Checkpoint, str, Path)):
        predictor = ModelPredictor.from_checkpoint(checkpoint)
    else:
        predictor = checkpoint
    if len(dataset) == 0:
        raise EmptyDataset("empty dataset")
    band = predictor.model.config.band if isinstance(predictor, ModelPredictor) else DEFAULT_BAND
    return evaluate_records(predictor, load_records(dataset), target_seconds, band).report


# ------------------------------------------------------------------ training

def _batch_tensors(clips: list[FrameClip], dtype, device):
    x = torch.from_numpy(np.stack([c.data for c in clips])).to(device, dtype)
    bvp = torch.from_numpy(np.stack([c.bvp for c in clips])).to(device, dtype)
    hr = torch.tensor([c.hr_bpm for c in clips], dtype=dtype, device=device)
    ids = torch.tensor([c.identity for c in clips], dtype=torch.long, device=device)
    return x, bvp, hr, ids


def _epoch_items(records: list[LoadedRecord], length: int, cfg: TrainConfig, rng: np.random.Generator):
    items = []
    for ri, lr in enumerate(records):
        starts = window_starts(lr.record.num_frames, length, cfg.stride)
        k = min(cfg.clips_per_record, len(starts))
        for s in rng.choice(len(starts), size=k, replace=False):
            items.append((ri, starts[int(s)]))
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def _clip_mae(bvp_pred: torch.Tensor, clips: list[FrameClip], band: HrBand) -> list[float]:
    errs = []
    for pred, clip in zip(bvp_pred.detach().double().cpu().numpy(), clips):
        try:
            errs.append(abs(estimate_hr(pred, clip.fps, band) - clip.hr_bpm))
        except NoSpectralPeak:
            errs.append(math.nan)
    return errs


def _is_better(mae, acc, best):
    if best is None:
        return True
    b_mae, b_acc = best
    if math.isnan(b_mae):
        return not math.isnan(mae)
    if math.isnan(mae):
        return False
    return mae < b_mae or (mae == b_mae and acc > b_acc)


def train(model_config: ModelConfig, train_config: TrainConfig, dataset: DatasetIndex,
          out_dir=None, records: list[LoadedRecord] | None = None,
          progress: Callable[[dict], None] | None = None) -> tuple[Checkpoint, TrainHistory]:
    """Fit the network; returns the best-validation checkpoint and the history.

    ``records`` may hold already-decoded records for ``dataset`` (same order)
    to skip image decoding.
    """
    cfg = train_config
    if len(dataset) == 0:
        raise EmptyDataset("no training records")
    if dataset.num_identities < 2:
        raise EmptyDataset("need at least 2 identities")
    if model_config.num_identities != dataset.num_identities:
        model_config = ModelConfig.from_dict({**model_config.to_dict(), "num_identities": dataset.num_identities})
    out_dir = Path(out_dir) if out_dir is not None else None

    if records is None:
        records = load_records(dataset)
    by_path = {str(d.path): r for d, r in zip(dataset.records, records)}
    train_idx, val_idx = split_records(dataset, cfg.val_fraction, cfg.seed)
    train_recs = [by_path[str(d.path)] for d in train_idx.records]
    val_recs = [by_path[str(d.path)] for d in val_idx.records]
    for lr in records:
        _check_resolution(model_config, lr.record)
    length = model_config.input_shape[0]

    prev_det = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(cfg.deterministic)
    try:
        torch.manual_seed(cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        model = RFaceNet(model_config).to(cfg.device)
        opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
        band = model_config.band
        history = TrainHistory()
        best = best_ckpt = None

        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            model.train()
            sums = dict(loss=0.0, bvp_term=0.0, hr_term=0.0, id_term=0.0)
            errs, n_seen, n_correct = [], 0, 0
            items = _epoch_items(train_recs, length, cfg, rng)
            for b0 in range(0, len(items), cfg.batch_size):
                batch = items[b0:b0 + cfg.batch_size]
                clips = [train_recs[ri].clip(s, length, band) for ri, s in batch]
                x, bvp, hr, ids = _batch_tensors(clips, torch.float32, cfg.device)
                out = model(x)
                terms = multitask_terms(out.bvp, bvp, hr, out.id_logits, ids, model.log_vars,
                                        clips[0].fps, band, model_config.temperature)
                if not torch.isfinite(terms.total):
                    _nonfinite_snapshot(out_dir, model, epoch, batch, train_recs, terms)
                opt.zero_grad()
                terms.total.backward()
                opt.step()

                n = len(batch)
                n_seen += n
                for key, val in zip(("loss", "bvp_term", "hr_term", "id_term"), terms[:4]):
                    sums[key] += float(val.detach()) * n
                n_correct += int((out.id_logits.argmax(1) == ids).sum())
                errs += _clip_mae(out.bvp, clips, band)

            sigmas = torch.exp(0.5 * model.log_vars.detach()).tolist()
            row = {k: v / max(n_seen, 1) for k, v in sums.items()}
            row.update(epoch=epoch, sigma1=sigmas[0], sigma2=sigmas[1], sigma3=sigmas[2],
                       mae=float(np.nanmean(errs)) if errs else math.nan,
                       id_acc=n_correct / max(n_seen, 1), val_mae=math.nan, val_id_acc=math.nan)

            validate = val_recs and (epoch % cfg.val_every == 0 or epoch == cfg.epochs)
            if validate:
                res = evaluate_records(ModelPredictor(model, cfg.device), val_recs, cfg.target_seconds, band)
                row["val_mae"], row["val_id_acc"] = res.report.mae, res.id_acc
                model.train()
            row["seconds"] = time.perf_counter() - t0
            history.rows.append(row)
            if progress is not None:
                progress(row)
            log.info("epoch %d loss %.4f mae %.2f acc %.3f val_mae %.2f val_acc %.3f", epoch, row["loss"],
                     row["mae"], row["id_acc"], row["val_mae"], row["val_id_acc"])

            score = (row["val_mae"], row["val_id_acc"]) if val_recs else (-epoch, 0.0)
            if (validate or not val_recs) and _is_better(*score, best):
                best = score
                best_ckpt = Checkpoint.from_model(
                    model, epoch=epoch, val_mae=row["val_mae"], val_id_acc=row["val_id_acc"],
                    train_config=asdict(cfg), val_records=[str(d.path) for d in val_idx.records])
            if (validate and cfg.early_stop_mae is not None and row["val_mae"] <= cfg.early_stop_mae
                    and (cfg.early_stop_acc is None or row["val_id_acc"] >= cfg.early_stop_acc)):
                break
        if best_ckpt is None:
            best_ckpt = Checkpoint.from_model(model, epoch=len(history), train_config=asdict(cfg),
                                              val_records=[str(d.path) for d in val_idx.records])
    finally:
        torch.use_deterministic_algorithms(prev_det)

    if out_dir is not None:
        best_ckpt.save(out_dir / "checkpoint.pt")
        history.to_csv(out_dir / "history.csv")
    return best_ckpt, history


def _nonfinite_snapshot(out_dir, model, epoch, batch, records, terms):
    detail = {k: float(v.detach().mean()) for k, v in terms._asdict().items()}
    msg = f"non-finite loss at epoch {epoch}: {detail}"
    if out_dir is not None:
        path = Path(out_dir) / "nonfinite_snapshot.pt"
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({"epoch": epoch, "terms": detail,
                    "batch": [(str(records[ri].record.path), s) for ri, s in batch],
                    "state_dict": model.state_dict()}, path)
        msg += f"; snapshot written to {path}"
    raise NonfiniteLoss(msg)


def config_fields(cls) -> list[str]:
    return [f.name for f in fields(cls)]
