"""
Обработчики подкоманд CLI.
Каждый обработчик читает входные файлы, делегирует работу сервисам и пишет результат в --out;
таблицы и след итераций печатаются в stdout.
"""

import argparse
from pathlib import Path
from typing import List, Optional
import numpy as np
from loguru import logger
from protomem.core.exceptions import InvalidInputError
from protomem.models.clustering import (
    ClusterConfig,
    ClusterResultFile,
    ClusterVariant,
    PartWeightMap,
    PrototypeMemory,
)
from protomem.models.fitting import CameraParams, FitProblem
from protomem.models.records import DatasetRecord, LabelsFile, ScoreRecord
from protomem.models.reports import BucketReport, SweepReport
from protomem.services.body_model_service import BodyModelService
from protomem.services.memory_service import MemoryService
from protomem.cli import dependencies as deps

VARIANTS = {
    "p3dh": ClusterVariant.P3DH,
    "3dh": ClusterVariant.UNIFORM_3DH,
    "random_center": ClusterVariant.RANDOM_CENTER,
    "naive": ClusterVariant.NAIVE_PARAMS,
}


def cmd_gen_toy(args: argparse.Namespace) -> int:
    model = BodyModelService.gen_toy_model(seed=args.seed, verts_per_joint=args.verts_per_joint)
    BodyModelService.save_model(model, args.out)
    return 0


def cmd_gen_samples(args: argparse.Namespace) -> int:
    dataset = deps.get_dataset_service(deps.get_body_service(args.model))
    records, labels = dataset.gen_samples(seed=args.seed, n=args.n, clusters=args.clusters, noise=args.noise)
    dataset.write_jsonl(records, args.out)
    dataset.write_labels(labels, dataset.labels_path(args.out), args.seed, args.clusters, args.noise)
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    body = deps.get_body_service(args.model)
    dataset = deps.get_dataset_service(body)
    clustering = deps.get_clustering_service(body, args.threads)

    records = dataset.read_jsonl(args.data, DatasetRecord)
    samples = dataset.to_params(records)
    result = clustering.cluster(samples, cluster_config(args))
    dataset.write_json(ClusterResultFile.from_result(result), args.out)

    for iteration, gamma_bar in enumerate(result.trace, start=1):
        print(f"{iteration}\t{gamma_bar:.6g}")

    sidecar = dataset.labels_path(args.data)
    if sidecar.exists():
        truth = dataset.read_json(sidecar, LabelsFile)
        if len(truth.labels) == len(samples):
            print(f"ARI\t{clustering.adjusted_rand_index(truth.labels, result.assignments):.6f}")
    return 0


def cmd_build_memory(args: argparse.Namespace) -> int:
    dataset = deps.get_dataset_service()
    result = dataset.read_json(args.result, ClusterResultFile)
    try:
        cluster_result = result.to_result()
    except ValueError as e:
        raise InvalidInputError(f"{args.result}: {e}") from e

    digest = None
    if args.data is not None:
        digest = MemoryService.dataset_digest(dataset.to_params(dataset.read_jsonl(args.data, DatasetRecord)))
    memory = MemoryService.build_memory(cluster_result, digest)
    MemoryService.save_memory(memory, args.out)
    print(f"K\t{memory.K}")
    return 0


def cmd_label(args: argparse.Namespace) -> int:
    body = deps.get_body_service(args.model)
    dataset = deps.get_dataset_service(body)
    experiment = deps.get_experiment_service(body, args.threads)

    memory = MemoryService.load_memory(args.memory)
    samples = dataset.to_params(dataset.read_jsonl(args.data, DatasetRecord))
    labels = deps.get_memory_service(body).label_samples(samples, memory, experiment.memory_weights(memory))
    dataset.write_jsonl([ScoreRecord(scores=[float(x) for x in c]) for c in labels], args.out)
    return 0


def cmd_select(args: argparse.Namespace) -> int:
    dataset = deps.get_dataset_service()
    memory = MemoryService.load_memory(args.memory)
    scores = dataset.read_jsonl(args.scores, ScoreRecord)
    selected = [MemoryService.select_prototype(memory, s.scores) for s in scores]
    dataset.write_jsonl([DatasetRecord.from_params(p) for p in selected], args.out)
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    if args.paired or args.sweep_k or args.sweep_limb_weight:
        return _run_experiments(args)

    body = deps.get_body_service(args.model)
    dataset = deps.get_dataset_service(body)
    fitting = deps.get_fitting_service(body)
    if args.memory is None:
        raise InvalidInputError("fit needs --memory to choose initial prototypes")
    memory = MemoryService.load_memory(args.memory)

    # 1. Задачи подгонки
    records: Optional[List[DatasetRecord]] = None
    if args.data is not None:
        records = dataset.read_jsonl(args.data, DatasetRecord)
    if args.problems is not None:
        problems = dataset.read_jsonl(args.problems, FitProblem)
    elif records is not None:
        problems = [dataset.to_problem(r) for r in records]
    else:
        raise InvalidInputError("fit needs --data or --problems")

    # 2. Начальные приближения из памяти: по файлу оценок или по ближайшему прототипу
    if args.scores is not None:
        scores = [np.asarray(s.scores) for s in dataset.read_jsonl(args.scores, ScoreRecord)]
    elif records is not None:
        experiment = deps.get_experiment_service(body, args.threads)
        samples = dataset.to_params(records)
        scores = deps.get_memory_service(body).label_samples(samples, memory, experiment.memory_weights(memory))
    else:
        raise InvalidInputError("fit needs --scores or --data to choose prototypes")
    if len(scores) != len(problems):
        raise InvalidInputError(f"{len(scores)} score vectors for {len(problems)} fit problems")
    inits = [MemoryService.select_prototype(memory, c) for c in scores]

    if records is not None and len(records) == len(problems):
        cameras = [CameraParams.from_vector(r.camera) if r.camera is not None else None for r in records]
    else:
        cameras = [None] * len(problems)

    # 3. Подгонка и вывод
    reports = fitting.fit_many(inits, cameras, problems, args.iters, args.step, args.threads)
    predictions = [DatasetRecord.from_params(r.params, camera=r.camera.to_vector()) for r in reports]
    dataset.write_jsonl(predictions, args.out)
    dataset.write_jsonl(reports, _sibling(args.out, ".reports.jsonl"))

    print("index\tprototype\tloss_initial\tloss_final")
    for i, (c, report) in enumerate(zip(scores, reports)):
        print(f"{i}\t{int(np.argmax(c))}\t{report.trace[0]:.6g}\t{report.loss:.6g}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    body = deps.get_body_service(args.model)
    dataset = deps.get_dataset_service(body)
    preds = dataset.to_params(dataset.read_jsonl(args.pred, DatasetRecord))
    gts = dataset.to_params(dataset.read_jsonl(args.gt, DatasetRecord))
    report = deps.get_metrics_service(body).evaluate(preds, gts)
    dataset.write_json(report, args.out)
    print(f"MPVPE\t{report.mpvpe:.4f}\nMPJPE\t{report.mpjpe:.4f}\nPA-MPJPE\t{report.pa_mpjpe:.4f}")
    return 0


def cmd_buckets(args: argparse.Namespace) -> int:
    body = deps.get_body_service(args.model)
    dataset = deps.get_dataset_service(body)
    samples = dataset.to_params(dataset.read_jsonl(args.data, DatasetRecord))

    if args.memory is not None:
        memory = MemoryService.load_memory(args.memory)
        if memory.K != 1:
            raise InvalidInputError(f"bucketing needs the single-prototype memory (K = 1), got K = {memory.K}")
        singular = memory.prototype(0)
    else:
        singular = deps.get_experiment_service(body, args.threads).global_prototype(samples)

    predictions = None
    if args.pred is not None:
        predictions = dataset.to_params(dataset.read_jsonl(args.pred, DatasetRecord))
    report = deps.get_metrics_service(body).bucket_by_prototype_distance(
        samples, singular, args.edges, predictions, args.tails
    )
    dataset.write_json(report, args.out)
    dataset.write_csv(_bucket_rows(report), _sibling(args.out, ".csv"))

    print("low\thigh\tcount\tmpvpe")
    for row in report.buckets:
        mpvpe = f"{row.metrics.mpvpe:.4f}" if row.metrics is not None else "-"
        print(f"{row.low:g}\t{row.high:g}\t{row.count}\t{mpvpe}")
    return 0


def cluster_config(args: argparse.Namespace) -> ClusterConfig:
    """Настройки кластеризации из флагов; неуказанные веса частей берутся из settings."""
    defaults = PartWeightMap()
    weight_map = PartWeightMap(
        limb=_pick(args.limb_weight, defaults.limb),
        head=_pick(args.head_weight, defaults.head),
        hand=_pick(args.hand_weight, defaults.hand),
        foot=_pick(args.foot_weight, defaults.foot),
        torso=_pick(args.torso_weight, defaults.torso),
    )
    return ClusterConfig(
        K=args.k,
        gamma_hat=args.gamma_hat,
        lambda_hat=args.lambda_hat,
        seed=args.seed,
        variant=VARIANTS[args.variant],
        part_weight_map=weight_map,
        n_init=args.n_init,
        stop_when_stable=args.stop_when_stable,
    )


def _run_experiments(args: argparse.Namespace) -> int:
    if args.data is None:
        raise InvalidInputError("experiments need --data")
    body = deps.get_body_service(args.model)
    dataset = deps.get_dataset_service(body)
    experiment = deps.get_experiment_service(body, args.threads)
    records = dataset.read_jsonl(args.data, DatasetRecord)

    if args.sweep_k or args.sweep_limb_weight:
        config = cluster_config(args)
        rows = []
        if args.sweep_k:
            rows += experiment.sweep_k(records, args.sweep_k, config, args.iters, args.step)
        if args.sweep_limb_weight:
            rows += experiment.sweep_limb_weight(records, args.sweep_limb_weight, config, args.iters, args.step)
        dataset.write_json(SweepReport(rows=rows), args.out)
        dataset.write_csv([r.model_dump() for r in rows], _sibling(args.out, ".csv"))
        print("parameter\tvalue\tmpvpe\ttail_5\ttail_10")
        for r in rows:
            print(f"{r.parameter}\t{r.value:g}\t{r.mpvpe:.4f}\t{r.tail_5:.4f}\t{r.tail_10:.4f}")
        return 0

    if args.memory is None:
        raise InvalidInputError("the paired experiment needs --memory")
    memory: PrototypeMemory = MemoryService.load_memory(args.memory)
    report = experiment.paired_fit(records, memory, args.iters, args.step)
    dataset.write_json(report, args.out)
    dataset.write_csv([t.model_dump() for t in report.trials], _sibling(args.out, ".csv"))

    print("index\tprototype\tdistance\tmpvpe_prototype\tmpvpe_global\twin")
    for t in report.trials:
        print(
            f"{t.index}\t{t.prototype}\t{t.prototype_distance:.6g}\t"
            f"{t.mpvpe_prototype:.4f}\t{t.mpvpe_global:.4f}\t{int(t.win)}"
        )
    print(f"win_rate\t{report.win_rate:.4f}")
    logger.info(f"Доля побед старта из прототипа: {report.win_rate:.3f}")
    return 0


def _bucket_rows(report: BucketReport) -> List[dict]:
    rows = []
    for row in report.buckets:
        m = row.metrics
        rows.append(
            {
                "low": row.low,
                "high": row.high,
                "count": row.count,
                "mpvpe": m.mpvpe if m else "",
                "mpjpe": m.mpjpe if m else "",
                "pa_mpjpe": m.pa_mpjpe if m else "",
            }
        )
    return rows


def _sibling(path: Path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


def _pick(value: Optional[float], default: float) -> float:
    return default if value is None else value
