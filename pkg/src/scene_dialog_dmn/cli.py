from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, NoReturn, Sequence

from dotenv import load_dotenv

from scene_dialog_dmn import __version__
from scene_dialog_dmn.attention_dump import build_attention_dump, write_attention_dump
from scene_dialog_dmn.bleu import SMOOTHING_HELP, bleu
from scene_dialog_dmn.config import CONFIG_ALLOWED_KEYS, FUSION_MODES, env_overrides, parse_overrides, resolve_config
from scene_dialog_dmn.dialogues import load_dialogues
from scene_dialog_dmn.errors import ConfigurationError, DmnError, ResolutionError
from scene_dialog_dmn.evaluation import answer_tokens, bleu_report, generate_answers, teacher_forced_metrics
from scene_dialog_dmn.features import FeatureStore
from scene_dialog_dmn.gradcheck import SELECTORS, gradcheck
from scene_dialog_dmn.logging_filters import install_numeric_warning_compaction
from scene_dialog_dmn.model import PreparedDialogue, SceneDialogModel, load_run, prepare_dialogue
from scene_dialog_dmn.synthetic import generate_synthetic, write_corpus
from scene_dialog_dmn.training import train
from scene_dialog_dmn.vocab import Vocabulary, tokenize

logger = logging.getLogger("scene_dialog_dmn")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    """Usage errors print the full flag list and exit 2."""

    def __init__(self, *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self.commands: dict[str, argparse.ArgumentParser] = {}

    def error(self, message: str) -> NoReturn:
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"\n{self.prog}: error: {message}\n")

    def parse_args(self, args: Sequence[str] | None = None, namespace: Any = None) -> argparse.Namespace:  # type: ignore[override]
        parsed, extras = self.parse_known_args(args, namespace)
        if extras:
            # stray flags belong to the subcommand, so show its flag list
            owner = self.commands.get(getattr(parsed, "command", None) or "", self)
            owner.error(f"unrecognized arguments: {' '.join(extras)}")
        return parsed


def _env_seed(default: int = 0) -> int:
    return env_overrides().values.get("seed", default)


def _print_json(payload: Any) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _prepare(dialogues_path: str, vocab: Vocabulary) -> list[PreparedDialogue]:
    store = FeatureStore()
    return [prepare_dialogue(d, vocab, store) for d in load_dialogues(dialogues_path)]


def _load_model(args: argparse.Namespace) -> tuple[SceneDialogModel, Vocabulary]:
    model, vocab = load_run(args.run, checkpoint=args.checkpoint)
    model.freeze()
    return model, vocab


def _cmd_train(args: argparse.Namespace) -> int:
    given = {key: value for key, value in vars(args).items() if key in CONFIG_ALLOWED_KEYS}
    if args.debug:
        given["debug_logs"] = True
    config = resolve_config(args.config, parse_overrides(given))
    if config.debug_logs:
        logger.setLevel(logging.DEBUG)
        logger.debug("Debug logging enabled by the training config")
    if not config.train_path:
        raise ConfigurationError("No training data: pass --train or set train_path in the config")
    dialogues = load_dialogues(config.train_path)
    val_dialogues = load_dialogues(config.val_path) if config.val_path else None
    result = train(dialogues, config, val_dialogues=val_dialogues, run_dir=config.output_dir)
    if result.metrics:
        logger.info("Final epoch: %s", json.dumps(result.metrics[-1].to_dict(), sort_keys=True))
    return EXIT_OK


def _read_lines(path: str) -> list[list[str]]:
    source = Path(path)
    if not source.is_file():
        raise ResolutionError(str(source))
    return [tokenize(line) for line in source.read_text(encoding="utf-8").splitlines()]


def _cmd_eval(args: argparse.Namespace) -> int:
    if args.candidates or args.references:
        if not (args.candidates and args.references):
            raise ConfigurationError("--candidates and --references go together")
        report = bleu(_read_lines(args.candidates), _read_lines(args.references), args.max_n)
        _print_json({"bleu": report.to_dict()})
        return EXIT_OK
    if not (args.run and args.data):
        raise ConfigurationError("eval needs --run and --data, or --candidates and --references")
    model, vocab = _load_model(args)
    dialogues = _prepare(args.data, vocab)
    report, _ = bleu_report(
        model,
        dialogues,
        vocab,
        width=args.beam_width,
        max_len=args.max_len,
        concurrency=args.concurrency,
    )
    forced = teacher_forced_metrics(model, dialogues)
    _print_json({"dialogues": len(dialogues), "bleu": report.to_dict(), "teacher_forced": forced.to_dict()})
    return EXIT_OK


def _cmd_generate(args: argparse.Namespace) -> int:
    model, vocab = _load_model(args)
    dialogues = _prepare(args.data, vocab)
    hypotheses = generate_answers(
        model,
        dialogues,
        width=args.beam_width,
        max_len=args.max_len,
        concurrency=args.concurrency,
    )
    if args.format == "json":
        results = [
            {
                "id": dialogue.id,
                "question": " ".join(dialogue.questions[-1]),
                "answer": " ".join(answer_tokens(hyp, vocab)),
                "log_prob": hyp.log_prob,
                "score": hyp.score,
                "finished": hyp.finished,
            }
            for dialogue, hyp in zip(dialogues, hypotheses)
        ]
        text = json.dumps(results, indent=2) + "\n"
    else:
        text = "".join(" ".join(answer_tokens(hyp, vocab)) + "\n" for hyp in hypotheses)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    report = gradcheck(
        args.select or SELECTORS,
        trials=args.trials,
        tolerance=args.tol,
        seed=args.seed if args.seed is not None else _env_seed(),
        max_coords=args.coords,
        zero_params=args.zero_params,
    )
    _print_json(report.to_dict())
    if not report.passed:
        logger.error("Gradient check failed: max relative error %.3e >= %g", report.max_rel_error, args.tol)
        return EXIT_VALIDATION
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    corpus = generate_synthetic(
        args.n,
        args.segments,
        args.dim,
        args.seed if args.seed is not None else _env_seed(),
        audio_dim=args.audio_dim,
    )
    write_corpus(corpus, args.out)
    return EXIT_OK


def _cmd_dump_attention(args: argparse.Namespace) -> int:
    model, vocab = _load_model(args)
    dump = build_attention_dump(model, _prepare(args.data, vocab))
    write_attention_dump(args.out, dump)
    return EXIT_OK


def _add_model_args(parser: argparse.ArgumentParser, *, required: bool = True) -> None:
    parser.add_argument("--run", required=required, help="run directory holding model.dmnw, vocab.json, config.json")
    parser.add_argument("--checkpoint", default=None, help="checkpoint to load instead of <run>/model.dmnw")
    parser.add_argument("--data", required=required, help="dialogue JSON file")


def _add_decode_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beam-width", dest="beam_width", type=int, default=None)
    parser.add_argument("--max-len", dest="max_len", type=int, default=None)
    parser.add_argument("--concurrency", type=int, default=4, help="dialogues decoded at once")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scene-dialog-dmn", description="Scene-aware dialogue with episodic memory.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--debug", action="store_true", help="debug logging (also DEBUG_LOGS=1)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("train", help="train a model and write a run directory")
    p.add_argument("--config", default=None, help="JSON file with training config fields")
    s = argparse.SUPPRESS
    p.add_argument("--train", dest="train_path", default=s)
    p.add_argument("--val", dest="val_path", default=s)
    p.add_argument("--out", dest="output_dir", default=s)
    p.add_argument("--hidden", type=int, default=s)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=s)
    p.add_argument("--episodes", type=int, default=s)
    p.add_argument("--gamma", type=float, default=s)
    p.add_argument("--lr", dest="learning_rate", type=float, default=s)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=s)
    p.add_argument("--epochs", type=int, default=s)
    p.add_argument("--beam-width", dest="beam_width", type=int, default=s)
    p.add_argument("--max-len", dest="max_len", type=int, default=s)
    p.add_argument("--seed", type=int, default=s)
    p.add_argument("--fusion", choices=FUSION_MODES, default=s)
    p.add_argument("--modalities", default=s, help="comma-separated subset of visual,audio,caption,summary")
    p.add_argument("--no-chain", dest="chain_history", action="store_false", default=s)
    p.add_argument("--embeddings", dest="embeddings_path", default=s, help="pretrained vectors, 'token v1 .. vd' per line")
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=s)
    p.add_argument("--clip-norm", dest="clip_norm", type=float, default=s)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="BLEU and token accuracy as JSON", epilog=SMOOTHING_HELP)
    _add_model_args(p, required=False)
    _add_decode_args(p)
    p.add_argument("--candidates", default=None, help="one candidate answer per line")
    p.add_argument("--references", default=None, help="one reference answer per line")
    p.add_argument("--max-n", dest="max_n", type=int, default=4, choices=(1, 2, 3, 4))
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("generate", help="beam-search the last answer of every dialogue")
    _add_model_args(p)
    _add_decode_args(p)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", default=None, help="write here instead of standard output")
    p.set_defaults(handler=_cmd_generate)

    p = sub.add_parser("gradcheck", help="compare tape gradients with finite differences")
    p.add_argument("--select", action="append", choices=SELECTORS, default=None)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--coords", type=int, default=None, help="coordinates checked per parameter block (default: all)")
    p.add_argument("--zero-params", dest="zero_params", action="store_true")
    p.set_defaults(handler=_cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic scene-dialogue corpus")
    p.add_argument("--n", type=int, default=200, help="number of dialogues")
    p.add_argument("--segments", type=int, default=6)
    p.add_argument("--dim", type=int, default=16, help="visual feature width")
    p.add_argument("--audio-dim", dest="audio_dim", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="data/synthetic")
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("dump-attention", help="write per-question attention distributions as JSON")
    _add_model_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_dump_attention)
    parser.commands = dict(sub.choices)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    debug_logs = args.debug or (os.getenv("DEBUG_LOGS") or "").lower() in {"1", "true", "yes", "on"}
    logging.basicConfig(level=logging.DEBUG if debug_logs else logging.INFO)
    install_numeric_warning_compaction()
    try:
        return args.handler(args)
    except (DmnError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
