"""
コマンドラインのメインプログラム

終了コード: 0 成功 / 1 使い方・設定の誤り / 2 データの誤り
"""
import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

import pydantic

# モジュールパスを追加
sys.path.append(str(Path(__file__).parent.parent))

from cli.schemas import PipelineConfig, UsageError, load_generator_config, load_plan_file, split_list
from services import render
from services.analyzer import COORD_METHODS, METHODS, MethodSpec, order
from services.datagen import BoidsConfig, gen_flocking, gen_reynolds_clusters
from services.errors import TrajectoryError
from services.experiment import load_dataset, run_bench, run_comparison, run_sweep
from services.metrics import NeighborSpec, contribution_rugs, evaluate, summarize
from services.storage import Storage, build_manifest, metric_rows, write_manifest_file, write_rows
from services.trajectories import load_csv, load_ordering_csv, save_coords_csv, save_csv, save_ordering_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

RENDER_KINDS = ("rug", "lines", "heat-ksdi", "heat-kste", "strip-ksdi", "strip-kste")


class ArgumentParser(argparse.ArgumentParser):
    """エラーで終了せず UsageError を送出する"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().strip()}")


def _sigma(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"sigma must be in [0,1], got {text}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=1, help="並列数")
    common.add_argument("--quiet", action="store_true", help="進捗表示を抑える")

    method_opts = ArgumentParser(add_help=False)
    method_opts.add_argument("--sigma", type=_sigma, default=0.5, help="SPC/CPC の伸長判定閾値 [0,1]")
    method_opts.add_argument("--cut-factor", type=float, default=2.0, help="CPC のクラスタ切断倍率")
    method_opts.add_argument("--bits", type=int, default=16, help="HIL/ZOR の格子ビット数")
    method_opts.add_argument("--rtree-capacity", type=int, default=8, help="RTR のノード容量")
    method_opts.add_argument("--snn-k", type=int, default=10, help="SNN の近傍数")
    method_opts.add_argument("--sam-iters", type=_positive_int, default=500, help="Sammon の反復回数")
    method_opts.add_argument("--tsne-perplexity", type=float, default=40.0, help="t-SNE の perplexity")
    method_opts.add_argument("--tsne-iters", type=_positive_int, default=1000, help="t-SNE の反復回数")
    method_opts.add_argument("--seed", type=int, default=0, help="乱数シード")
    method_opts.add_argument("--init", choices=("random", "prev"),
                             help="SAM/SNE の初期化 (prev は samp/snep と同じ)")

    render_opts = ArgumentParser(add_help=False)
    render_opts.add_argument("--scale", type=_positive_int, default=1, help="1セルあたりのピクセル数")
    render_opts.add_argument("--cap-ksdi", type=float, default=render.STRIP_CAPS["KSdi"])
    render_opts.add_argument("--cap-kste", type=float, default=render.STRIP_CAPS["KSte"])
    render_opts.add_argument("--color-mode", choices=("frame", "reference"), default="frame")
    render_opts.add_argument("--reference-frame", type=int, default=0)

    parser = ArgumentParser(prog="motionrug", description="移動体の軌跡から1次元の順序列を作り評価・描画する")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    sub.required = True

    p = sub.add_parser("generate", parents=[common], help="合成データを生成")
    p.add_argument("--model", choices=("reynolds", "flocking"), default="reynolds")
    p.add_argument("--clusters", type=_positive_int)
    p.add_argument("--boids", type=_positive_int, help="クラスタあたりの個体数")
    p.add_argument("--frames", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="key = value 形式の生成器設定")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("order", parents=[common, method_opts], help="順序を計算")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("-o", "--output", required=True, help="順序CSV (frame,rank,id)")
    p.add_argument("--coords-output", help="1次元座標CSV（既定: <output>_coords.csv）")

    p = sub.add_parser("evaluate", parents=[common], help="順序を評価")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--ordering", required=True)
    p.add_argument("-k", type=_positive_int, default=10, help="Keys Similarity の近傍数")
    p.add_argument("-o", "--output", required=True, help="フレーム別指標CSV")

    p = sub.add_parser("sweep", parents=[common], help="SPC の sigma スイープ")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--sigmas", help="カンマ区切りの sigma（既定: 0..1 を 0.01 刻み）")
    p.add_argument("-k", type=_positive_int, default=10)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("render", parents=[common, render_opts], help="画像を描画")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--ordering", required=True)
    p.add_argument("--coords", help="1次元座標CSV（lines に必要）")
    p.add_argument("--kind", choices=RENDER_KINDS, default="rug")
    p.add_argument("--height", type=_positive_int, help="strip/lines の高さ")
    p.add_argument("-k", type=_positive_int, default=10)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("pipeline", parents=[common], help="計画ファイルの比較実験を実行")
    p.add_argument("--config", required=True)
    p.add_argument("-o", "--output", help="出力ディレクトリ（計画の output_dir を上書き）")

    p = sub.add_parser("bench", parents=[common, method_opts], help="順序計算の時間を計測")
    p.add_argument("-i", "--input", help="省略時は生成データ")
    p.add_argument("--methods", default="fxd,hil,zor,pqr,rtr,clc,spc,cpc")
    p.add_argument("--clusters", type=_positive_int, default=3)
    p.add_argument("--boids", type=_positive_int, default=50)
    p.add_argument("--frames", type=_positive_int, default=200)
    p.add_argument("--repeats", type=_positive_int, default=1)
    p.add_argument("-o", "--output", help="計測結果CSV")
    return parser


def _log(args, message: str):
    if not args.quiet:
        print(message)


def _method_spec(args, method: str) -> MethodSpec:
    if args.init == "prev" and method in ("sam", "sne"):
        method += "p"
    elif args.init == "random" and method in ("samp", "snep"):
        method = method[:-1]
    return MethodSpec(
        method=method,
        sigma=args.sigma,
        cut_factor=args.cut_factor,
        bits=args.bits,
        rtree_capacity=args.rtree_capacity,
        snn_k=args.snn_k,
        sam_iterations=args.sam_iters,
        tsne_perplexity=args.tsne_perplexity,
        tsne_iterations=args.tsne_iters,
        seed=args.seed,
    )


def _manifest_path(output) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def _emit_manifest(cfg: PipelineConfig, parameters: Dict, outputs: List[Path], extra: Optional[Dict] = None):
    manifest = build_manifest(cfg.command, parameters, cfg.seed, cfg.input_paths(), outputs, extra=extra)
    write_manifest_file(_manifest_path(outputs[0]), manifest)


def cmd_generate(args) -> int:
    cfg = load_generator_config(args.config) if args.config else BoidsConfig()
    updates = {"clusters": args.clusters, "boids_per_cluster": args.boids, "frames": args.frames, "seed": args.seed}
    if args.model == "flocking" and args.clusters is None:
        updates["clusters"] = 1
    cfg = BoidsConfig(**{**cfg.model_dump(), **{k: v for k, v in updates.items() if v is not None}})

    _log(args, f"[データ生成] {args.model} モデル (n={cfg.n}, T={cfg.frames}, seed={cfg.seed})")
    ds = gen_flocking(cfg) if args.model == "flocking" else gen_reynolds_clusters(cfg)
    output = Path(args.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    save_csv(ds, output)

    run = PipelineConfig(command="generate", output=str(output), seed=cfg.seed, quiet=args.quiet)
    _emit_manifest(run, {"model": args.model, **cfg.model_dump()}, [output])
    _log(args, f"[保存] {output}")
    return EXIT_OK


def cmd_order(args) -> int:
    spec = _method_spec(args, args.method)
    run = PipelineConfig(command="order", input=args.input, output=args.output, method=spec,
                         seed=spec.seed, threads=args.threads, quiet=args.quiet)
    ds = load_csv(args.input)
    _log(args, f"[順序計算] {spec.label} を実行中... (n={ds.n}, T={ds.T})")
    ordering = order(ds, spec)

    output = Path(args.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    save_ordering_csv(ordering, ds, output)
    outputs = [output]
    if ordering.coords is not None:
        coords_path = Path(args.coords_output) if args.coords_output else output.with_name(
            f"{output.stem}_coords{output.suffix}")
        save_coords_csv(ordering, ds, coords_path)
        outputs.append(coords_path)

    _emit_manifest(run, {"method": spec.method, **spec.params()}, outputs)
    _log(args, f"[保存] {', '.join(str(p) for p in outputs)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = PipelineConfig(command="evaluate", input=args.input, output=args.output, quiet=args.quiet)
    ds = load_csv(args.input)
    ordering = load_ordering_csv(args.ordering, ds)
    _log(args, f"[評価] 指標を計算中... (n={ds.n}, T={ds.T}, k={args.k})")
    series = evaluate(ds, ordering, NeighborSpec(k=args.k))

    output = write_rows(args.output, metric_rows(series, ds), ["frame"] + [s.name for s in series])
    summary = summarize(series)
    for s in series:
        stats = summary[s.name]
        if stats is not None:
            _log(args, f"  {s.name}: 平均 {stats['mean']:.4f} / 最大 {stats['max']:.4f} / 最小 {stats['min']:.4f}")
    _emit_manifest(run, {"k": args.k, "ordering": Path(args.ordering).name}, [output],
                   extra={"summary": {k: v for k, v in summary.items() if k != "説明"}})
    return EXIT_OK


def cmd_sweep(args) -> int:
    run = PipelineConfig(command="sweep", input=args.input, output=args.output,
                         threads=args.threads, quiet=args.quiet)
    sigmas = None
    if args.sigmas:
        try:
            sigmas = [_sigma(s) for s in split_list(args.sigmas)]
        except argparse.ArgumentTypeError as e:
            raise UsageError(str(e))
    ds = load_csv(args.input)
    table = run_sweep(ds, sigmas, NeighborSpec(k=args.k), threads=args.threads, quiet=args.quiet)
    columns = ["sigma", "mean_KSdi", "mean_KSte", "max_KSte", "interpolated_frames", "identical_to_previous"]
    output = write_rows(args.output, table.rows, columns)
    low, high = table.cutoffs
    _emit_manifest(run, {"k": args.k, "sigmas": [r["sigma"] for r in table.rows]}, [output],
                   extra={"cutoffs": {"low": low, "high": high}})
    return EXIT_OK


def _colormap(args) -> render.Colormap2D:
    return render.Colormap2D(mode=args.color_mode, reference_frame=args.reference_frame)


def cmd_render(args) -> int:
    run = PipelineConfig(command="render", input=args.input, output=args.output, quiet=args.quiet)
    ds = load_csv(args.input)
    ordering = load_ordering_csv(args.ordering, ds, coords_path=args.coords)
    cm = _colormap(args)
    _log(args, f"[描画] {args.kind} (n={ds.n}, T={ds.T}, scale={args.scale})")

    if args.kind == "rug":
        image = render.render_rug(ds, ordering, cm, args.scale)
    elif args.kind == "lines":
        image = render.render_motionlines(ds, ordering, cm, height=args.height or 400, frame_width=args.scale)
    else:
        metric = "KSdi" if args.kind.endswith("ksdi") else "KSte"
        spec = NeighborSpec(k=args.k)
        if args.kind.startswith("heat"):
            image = render.render_heat_rug(ds, ordering, contribution_rugs(ds, ordering, spec)[metric],
                                           render.METRIC_COLORS[metric], args.scale)
        else:
            series = {s.name: s for s in evaluate(ds, ordering, spec)}[metric]
            cap = args.cap_ksdi if metric == "KSdi" else args.cap_kste
            image = render.render_metric_strip(series, cap, height=args.height or 40,
                                               frames=ds.T, scale=args.scale)

    output = render.write_png(image, args.output)
    _emit_manifest(run, {"kind": args.kind, "scale": args.scale, "ordering": Path(args.ordering).name}, [output],
                   extra={"colormap": cm.model_dump(), "anchors": cm.anchors()})
    _log(args, f"[保存] {output} ({image.shape[1]}x{image.shape[0]})")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    plan = load_plan_file(args.config, output_dir=args.output, threads=args.threads if args.threads > 1 else None)
    ds = load_dataset(plan)
    storage = Storage(plan.output_dir)
    table = run_comparison(plan, ds, quiet=args.quiet)
    storage.save_comparison(table, ds)

    if plan.render:
        _log(args, "[描画] ラグと指標バーを描画中...")
        cm = plan.colormap
        for r in table.results:
            if not r.ok:
                continue
            label = r.spec.label
            storage.save_image(f"{label}_rug", render.render_rug(ds, r.ordering, cm, plan.scale))
            by_name = r.series_by_name()
            for metric in ("KSdi", "KSte"):
                strip = render.render_metric_strip(by_name[metric], render.STRIP_CAPS[metric],
                                                   frames=ds.T, scale=plan.scale)
                storage.save_image(f"{label}_{metric}_strip", strip)
            rugs = contribution_rugs(ds, r.ordering, plan.neighbors)
            for metric, contributions in rugs.items():
                heat = render.render_heat_rug(ds, r.ordering, contributions, render.METRIC_COLORS[metric], plan.scale)
                storage.save_image(f"{label}_{metric}_heat", heat)
            if r.spec.method in COORD_METHODS:
                storage.save_image(f"{label}_lines", render.render_motionlines(ds, r.ordering, cm))

    inputs = [plan.input] if plan.input else []
    storage.write_manifest("pipeline", plan.model_dump(exclude={"threads"}), plan.seed, inputs,
                           extra={"anchors": plan.colormap.anchors(),
                                  "failures": {r.spec.label: r.error for r in table.results if not r.ok}})
    _log(args, f"[完了] 出力: {storage.base_dir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    names = split_list(args.methods)
    unknown = [m for m in names if m not in METHODS]
    if unknown:
        raise UsageError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
    specs = [_method_spec(args, m) for m in names]
    if args.input:
        ds = load_csv(args.input)
    else:
        cfg = BoidsConfig(clusters=args.clusters, boids_per_cluster=args.boids, frames=args.frames, seed=args.seed)
        ds = gen_reynolds_clusters(cfg)
    rows = run_bench(ds, specs, repeats=args.repeats, quiet=args.quiet)
    if args.output:
        write_rows(args.output, rows)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "order": cmd_order,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "render": cmd_render,
    "pipeline": cmd_pipeline,
    "bench": cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    コマンドを実行して終了コードを返す

    Args:
        argv: 引数（省略時は sys.argv[1:]）

    Returns:
        0 成功、1 使い方・設定の誤り、2 データの誤り
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except UsageError as e:
        print(f"[エラー] {e}", file=sys.stderr)
        return EXIT_USAGE
    except pydantic.ValidationError as e:
        for err in e.errors():
            where = ".".join(str(p) for p in err["loc"])
            print(f"[エラー] {where}: {err['msg']}" if where else f"[エラー] {err['msg']}", file=sys.stderr)
        return EXIT_USAGE
    except TrajectoryError as e:
        print(f"[エラー] {e}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as e:
        print(f"[エラー] {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
