import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from dataset import FORMAT_NAME, load_dataset, save_dataset, save_feature_sidecar
from errors import ConfigurationError, DataError, ExpertError, InvariantError
from gcbc import MODEL_FORMAT, gcbc_train_from_config, load_model, save_model
from harness import REPORT_FORMAT, emit_report, load_spec, parse_report, run_experiment
from helper import config_hash, load_config, render
from logger import setup_logging
from reachability import GRAPH_FORMAT, build_graph, load_artifact, save_artifact, value_iteration
from state import TASKS, EnvConfig
from surrogate_env import gen_demos
from transport import GROUND_METRICS, SOLVERS, pairwise_matrix

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

MATRIX_FORMAT = 'demobot-wasserstein'


class DemoBotApp:
    """Command-line front end: builds the effective config and dispatches one command."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = load_config(args.config, self._flag_overrides(args))
        level = getattr(logging, self.config['logging']['level'].upper(), None)
        if not isinstance(level, int):
            raise ConfigurationError(f"unknown log level '{self.config['logging']['level']}'")
        self.logger = setup_logging(log_dir=self.config['logging']['log_dir'], console_level=level)

    @staticmethod
    def _flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
        overrides: Dict[str, Dict[str, Any]] = {}

        def put(section, key, value):
            if value is not None:
                overrides.setdefault(section, {})[key] = value

        put('logging', 'level', args.log_level)
        put('harness', 'workers', getattr(args, 'workers', None))
        put('harness', 'episode_log', getattr(args, 'episode_log', None))
        put('harness', 'database', getattr(args, 'database', None))
        put('reachability', 'merge_eps', getattr(args, 'merge_eps', None))
        put('gcbc', 'seed', getattr(args, 'gcbc_seed', None))
        put('gcbc', 'epochs', getattr(args, 'epochs', None))
        return overrides

    def run(self) -> int:
        handler = getattr(self, 'cmd_' + self.args.command.replace('-', '_'))
        self.logger.debug(f"Running {self.args.command} with config {config_hash(self.config)}")
        handler()
        return EXIT_OK

    def cmd_gen_demos(self) -> None:
        env_config = EnvConfig.from_dict(self.config['env'], self.args.task)
        dataset = gen_demos(self.args.task, self.args.n, env_config, self.args.seed, logger=self.logger)
        dataset.metadata['config_hash'] = config_hash(self.config)
        save_dataset(dataset, self.args.out)
        if self.args.sidecar or self.config['dataset']['sidecar']:
            sidecar = self.args.sidecar or self.args.out + '.f8'
            save_feature_sidecar(dataset, sidecar)
        self.logger.info(f"Wrote {len(dataset)} trajectories to {self.args.out}")

    def cmd_build(self) -> None:
        dataset = load_dataset(self.args.dataset, self.args.sidecar)
        section = self.config['reachability']
        graph = build_graph(dataset, section['merge_eps'], section['metric'], section['merge_eps_factor'])
        table = value_iteration(graph, section['gamma'], section['tol'])
        save_artifact(graph, table, self.args.out, {"dataset": os.path.basename(self.args.dataset),
                                                     "config_hash": config_hash(self.config)})

    def cmd_train_gcbc(self) -> None:
        dataset = load_dataset(self.args.dataset, self.args.sidecar)
        model = gcbc_train_from_config(dataset, self.config)
        save_model(model, self.args.out)

    def cmd_eval(self) -> None:
        spec = load_spec(self.args.spec, self.config['harness'])
        table = run_experiment(spec, self.config, self.logger)
        emit_report(table, self.args.out, self.args.markdown)

    def cmd_wasserstein(self) -> None:
        dataset = load_dataset(self.args.dataset, self.args.sidecar)
        metric = self.args.metric or self.config['transport']['ground_metric']
        solver = self.args.solver or self.config['transport']['solver']
        matrix = pairwise_matrix(dataset, metric, solver)
        document = {
            "format": MATRIX_FORMAT,
            "metric": metric,
            "traj_ids": dataset.traj_ids,
            "matrix": matrix.tolist(),
        }
        with open(self.args.out, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(document, f, sort_keys=True)
            f.write('\n')
        self.logger.info(f"Wrote {matrix.shape[0]}x{matrix.shape[1]} distance matrix to {self.args.out}")

    def cmd_inspect(self) -> None:
        print(render('inspect.txt.j2', inspect_summary(self.args.path)), end='')


def _file_format(path: str) -> Optional[str]:
    try:
        with open(path, encoding='utf-8') as f:
            first = f.readline()
            if first.strip() == '{':
                return json.loads(first + f.read()).get('format')
            return json.loads(first).get('format')
    except FileNotFoundError as e:
        raise DataError("file not found", path=path) from e
    except (ValueError, AttributeError) as e:
        raise DataError("not a recognised demobot file", path=path) from e


def inspect_summary(path: str) -> Dict[str, Any]:
    """Template context describing a dataset, graph artifact, GCBC model or report."""
    kind = _file_format(path)
    rows: List[List[Any]] = []
    details: List[List[Any]] = []
    if kind == FORMAT_NAME:
        dataset = load_dataset(path)
        lengths = [len(dataset.trajectory(i)) for i in dataset.traj_ids]
        rows = [["trajectories", len(dataset)], ["steps", dataset.step_count],
                ["feature_dim", dataset.feature_dim],
                ["length min/max", f"{min(lengths)}/{max(lengths)}"]]
        rows += [[f"metadata.{key}", value] for key, value in sorted(dataset.metadata.items())
                 if key not in ('env', 'episode_seeds')]
        details = [[i, len(dataset.trajectory(i)), dataset.trajectory(i).task_tag] for i in dataset.traj_ids]
    elif kind == GRAPH_FORMAT:
        graph, table, metadata = load_artifact(path)
        stitched = sum(1 for node in graph.nodes if len(node.trajectories) > 1)
        reachable = int((table.values > table.unreachable).sum())
        rows = [["nodes", len(graph)], ["edges", len(graph.edges)], ["stitched nodes", stitched],
                ["merge_eps", graph.merge_eps], ["metric", graph.metric], ["gamma", table.gamma],
                ["sweeps", table.iterations], ["reachable pairs", reachable]]
        rows += [[f"metadata.{key}", value] for key, value in sorted(metadata.items())]
    elif kind == MODEL_FORMAT:
        model = load_model(path)
        rows = [["feature_dim", model.feature_dim], ["final_loss", model.final_loss]]
        rows += [[f"hparams.{key}", value] for key, value in sorted(model.hparams.items())]
    elif kind == REPORT_FORMAT:
        table = parse_report(path)
        rows = [["experiment", table.name], ["kind", table.kind], ["config_hash", table.config_hash],
                ["cells", len(table.cells)]]
        details = [[c.task, c.policy, c.demos, c.profile, f"{c.successes}/{c.episodes}"] for c in table.cells]
    else:
        raise DataError(f"unsupported file format '{kind}'", path=path)
    return {"path": path, "kind": kind, "rows": rows, "details": details}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='demobot', description='Retrieval-based few-shot imitation engine.')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='config file (default: $DEMOBOT_CONFIG, else built-in defaults)')
    common.add_argument('--log-level', help='console log level')
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen-demos', parents=[common], help='record scripted-expert demonstrations')
    gen.add_argument('--task', required=True, choices=TASKS)
    gen.add_argument('--n', required=True, type=int)
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--out', required=True)
    gen.add_argument('--sidecar', help='also write a binary feature sidecar')

    build = commands.add_parser('build', parents=[common], help='build the state graph and value table')
    build.add_argument('--dataset', required=True)
    build.add_argument('--sidecar')
    build.add_argument('--merge-eps', type=float)
    build.add_argument('--out', required=True)

    train = commands.add_parser('train-gcbc', parents=[common], help='train the goal-conditioned policy')
    train.add_argument('--dataset', required=True)
    train.add_argument('--sidecar')
    train.add_argument('--seed', dest='gcbc_seed', type=int)
    train.add_argument('--epochs', type=int)
    train.add_argument('--out', required=True)

    evaluate = commands.add_parser('eval', parents=[common], help='run an experiment spec')
    evaluate.add_argument('--spec', required=True)
    evaluate.add_argument('--out', required=True)
    evaluate.add_argument('--markdown', help='also render the report as Markdown')
    evaluate.add_argument('--episode-log', help='newline-delimited JSON episode log')
    evaluate.add_argument('--database', help='mirror results into this SQLite file')
    evaluate.add_argument('--workers', type=int)

    distance = commands.add_parser('wasserstein', parents=[common], help='pairwise trajectory distances')
    distance.add_argument('--dataset', required=True)
    distance.add_argument('--sidecar')
    distance.add_argument('--metric', choices=GROUND_METRICS)
    distance.add_argument('--solver', choices=SOLVERS)
    distance.add_argument('--out', required=True)

    inspect = commands.add_parser('inspect', parents=[common], help='summarise a dataset, artifact, model or report')
    inspect.add_argument('--path', required=True)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Application entry point; returns the process exit status."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        app = DemoBotApp(args)
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA

    try:
        return app.run()
    except ConfigurationError as e:
        app.logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (DataError, ExpertError, OSError) as e:
        app.logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA
    except InvariantError as e:
        app.logger.error(f"Internal invariant violated: {e}", exc_info=True)
        return EXIT_INTERNAL
    except Exception as e:
        app.logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
