"""
One file to run the retrosynthesis pipeline: tokenize and inspect SMILES, emit attention priors, augment a reaction
file, train a model, predict reactants, evaluate top-K accuracy, run the ablation grid, and write or convert corpora.

Usage: python retro.py <command> [options]; python retro.py <command> --help for the options of each command.
Exit codes: 0 success, 1 usage or config error, 2 unusable data, 3 runtime failure.
"""

import os
import sys
import logging
import argparse
import dataclasses
import pandas as pd
from tqdm import tqdm
from local import root, artifacts
from helpers import helpers
from helpers.errors import ConfigError, PipelineError, UsageError
from preprocess import smiles, priors, augment
from preprocess.augment import AugmentConfig
from preprocess.priors import IntraBiasMode
from model import checkpoint
from model.transformer import ModelConfig
from train import training
from train.training import TrainConfig
from analyse import evaluate
from analyse.decoding import BeamConfig
from collect import ingest, toy_corpus, uspto

logger = logging.getLogger('retro')

# DIRECTORY STRUCTURE FOR RUNS #

trunks = {'data': 'data/',
          'models': 'models/',
          'reports': 'reports/'}

leaves = {'toy corpus': 'toy.rxn',
          'parser corpus': 'parser_corpus.txt',
          'ablation': 'ablation/'}


def resolve(path):
    """Relative paths are taken from the root set in local.py."""
    return path if os.path.isabs(path) else os.path.join(root, path)


class RetroArgumentParser(argparse.ArgumentParser):
    """Argument errors become UsageError, so that main() owns the exit code."""

    def error(self, message):
        raise UsageError(message)


# CONFIG #

def load_configs(path=None, seed=None):
    """
    Defaults, overridden by a "key = value" file, overridden by --seed.

    :param path: str or None
    :param seed: int or None
    :return: (ModelConfig, TrainConfig, AugmentConfig, BeamConfig)
    """
    configs = [ModelConfig(), TrainConfig(), AugmentConfig(), BeamConfig()]
    if path is not None:
        configs = helpers.apply_config(helpers.read_key_value_file(path), configs,
                                       enum_types={'bias_mode': IntraBiasMode})
    model_cfg, train_cfg, augment_cfg, beam_cfg = configs
    if seed is not None:
        model_cfg = dataclasses.replace(model_cfg, init_seed=seed)
        train_cfg = dataclasses.replace(train_cfg, seed=seed)
    try:
        model_cfg.validate()
        train_cfg.validate()
    except (ValueError, PipelineError) as err:
        raise ConfigError(str(err))
    return model_cfg, train_cfg, augment_cfg, beam_cfg


def run_seed(args):
    return 0 if args.seed is None else args.seed


def resolved_config(*configs):
    flat = {}
    for cfg in configs:
        flat.update(helpers.config_to_dict(cfg))
    return flat


def write_output(text, out_path):
    if out_path is None:
        sys.stdout.write(text)
    else:
        helpers.write_atomically(resolve(out_path), text)


def with_manifest(command, seed, config, inputs, outputs, run):
    """Run a command's work and, when it writes files, record a manifest next to the first output."""
    manifest = helpers.start_manifest(command, config, inputs, outputs, seed)
    result = run()
    if outputs:
        helpers.finish_manifest(manifest, resolve(outputs[0]) + '.manifest.json')
    return result


# COMMANDS #

def cmd_tokenize(args):
    texts = list(args.smiles)
    if args.input:
        texts += [line.strip() for line in ingest.read_lines(args.input) if line.strip()]
    if not texts:
        raise UsageError('tokenize needs SMILES arguments or --input')
    lines = [' '.join(smiles.tokenize(text).texts) for text in texts]
    outputs = [args.output] if args.output else []
    with_manifest('tokenize', run_seed(args), {}, [args.input] if args.input else [], outputs,
                  lambda: write_output(''.join(line + '\n' for line in lines), args.output))


def cmd_emit_priors(args):
    model_cfg = load_configs(args.config, args.seed)[0]
    product = smiles.parse(args.product)
    reactants = smiles.parse(args.reactants) if args.reactants else None
    bundle = priors.reaction_priors(product, reactants, model_cfg.intra_config(), model_cfg.lambda_cross)
    outputs = [args.output] if args.output else []
    with_manifest('emit-priors', model_cfg.init_seed, resolved_config(model_cfg), [], outputs,
                  lambda: write_output(priors.format_prior_bundle(bundle), args.output))


def augment_records(records, augment_cfg, seed, quiet):
    train_records = [rec for rec in records if rec.split == 'train']
    logger.info('RUNNING: AUGMENTATION')
    logger.info('NUMBER OF RECORDS GOING IN: %d, FACTOR %d', len(train_records), augment_cfg.factor)
    stream = augment.augment_dataset(tqdm(train_records, disable=quiet, desc='augment'), augment_cfg.factor, seed,
                                     augment_cfg.paired, augment_cfg.max_retries)
    pairs = list(stream)
    flagged = len({pair.origin_id for pair in pairs if pair.mapping_incomplete})
    if flagged:
        logger.warning('%d RECORD(S) AUGMENTED WITH INCOMPLETE ATOM MAPPING', flagged)
    return pairs


def cmd_augment(args):
    model_cfg, train_cfg, augment_cfg, beam_cfg = load_configs(args.config, args.seed)
    if args.factor is not None:
        augment_cfg = dataclasses.replace(augment_cfg, factor=args.factor)
    if args.unpaired:
        augment_cfg = dataclasses.replace(augment_cfg, paired=False)

    def run():
        records = ingest.ingest(resolve(args.input), resolve(args.output) + '.rejects.tsv', args.split_ratio,
                                train_cfg.seed)
        pairs = augment_records(records, augment_cfg, train_cfg.seed, args.quiet)
        ingest.write_reaction_file(resolve(args.output), [ingest.format_pair(pair) for pair in pairs])
        logger.info('NUMBER OF PAIRS WRITTEN: %d', len(pairs))
    with_manifest('augment', train_cfg.seed, resolved_config(augment_cfg), [args.input], [args.output], run)


def training_sets(args, seed):
    records = ingest.ingest(resolve(args.data), resolve(args.output) + '.rejects.tsv', args.split_ratio, seed)
    if args.augmented:
        train_records = ingest.ingest(resolve(args.augmented))
    else:
        train_records = [rec for rec in records if rec.split == 'train']
    return train_records, [rec for rec in records if rec.split == 'valid']


def cmd_train(args):
    model_cfg, train_cfg, augment_cfg, beam_cfg = load_configs(args.config, args.seed)
    inputs = [args.data] + ([args.augmented] if args.augmented else [])
    dataset = training_sets(args, train_cfg.seed)
    with_manifest('train', train_cfg.seed, resolved_config(model_cfg, train_cfg), inputs, [args.output],
                  lambda: training.train(train_cfg, model_cfg, dataset, resolve(args.output), args.quiet))


def beam_config(args, beam_cfg):
    for key in ('beam_width', 'topk', 'max_len'):
        if getattr(args, key) is not None:
            beam_cfg = dataclasses.replace(beam_cfg, **{key: getattr(args, key)})
    if args.topk is None:
        beam_cfg = dataclasses.replace(beam_cfg, topk=min(beam_cfg.topk, beam_cfg.beam_width))
    if beam_cfg.topk > beam_cfg.beam_width:
        raise UsageError('--topk %d exceeds --beam %d' % (beam_cfg.topk, beam_cfg.beam_width))
    return beam_cfg


def product_of(line):
    """A bare product SMILES, or the product side of a reaction line."""
    first = line.split('\t')[0].strip()
    return first.split('>')[-1] if '>' in first else first


def cmd_predict(args):
    beam_cfg = beam_config(args, load_configs(args.config, args.seed)[3])
    model, vocab = checkpoint.load(resolve(args.checkpoint))
    predict = evaluate.make_predictor(model, vocab, beam_cfg)
    products = [product_of(line) for line in ingest.read_lines(resolve(args.input))
                if line.strip() and not line.startswith('#')]

    def run():
        blocks = []
        for product in tqdm(products, disable=args.quiet, desc='predict'):
            blocks.append('# %s\n' % product)
            for rank, cand in enumerate(predict(product), start=1):
                blocks.append('%d\t%.6f\t%s\n' % (rank, cand.score, cand.smiles))
        write_output(''.join(blocks), args.output)
    outputs = [args.output] if args.output else []
    with_manifest('predict', run_seed(args), resolved_config(beam_cfg), [args.checkpoint, args.input], outputs, run)


def cmd_eval(args):
    model_cfg, train_cfg, augment_cfg, beam_cfg = load_configs(args.config, args.seed)
    beam_cfg = beam_config(args, beam_cfg)
    model, vocab = checkpoint.load(resolve(args.checkpoint))
    records = ingest.ingest(resolve(args.data), split_ratio=args.split_ratio, split_seed=train_cfg.seed)
    chosen = records if args.split == 'all' else [rec for rec in records if rec.split == args.split]

    def run():
        report = evaluate.evaluate(evaluate.make_predictor(model, vocab, beam_cfg), chosen, quiet=args.quiet)
        write_output(report.to_text() + '\n' + report.to_key_values(), args.output)
        return report
    outputs = [args.output] if args.output else []
    with_manifest('eval', train_cfg.seed, resolved_config(beam_cfg), [args.checkpoint, args.data], outputs, run)


def ablation_grid(model_cfg, augment_cfg):
    """
    Every on/off combination of the graph priors, paired re-rooting, and data-scale augmentation.

    :return: list of (row label dict, ModelConfig, AugmentConfig)
    """
    grid = []
    for graph in (True, False):
        for paired in (True, False):
            for scaled in (True, False):
                cfg = model_cfg if graph else dataclasses.replace(model_cfg, bias_mode=IntraBiasMode.Off,
                                                                  lambda_cross=0.0)
                aug = dataclasses.replace(augment_cfg, paired=paired, factor=augment_cfg.factor if scaled else 1)
                grid.append(({'graph priors': graph, 'paired roots': paired, 'factor': aug.factor}, cfg, aug))
    return grid


def cmd_ablate(args):
    model_cfg, train_cfg, augment_cfg, beam_cfg = load_configs(args.config, args.seed)
    beam_cfg = beam_config(args, beam_cfg)
    out_dir = resolve(args.output_dir)

    def run():
        records = ingest.ingest(resolve(args.data), os.path.join(out_dir, 'rejects.tsv'), args.split_ratio,
                                train_cfg.seed)
        valid = [rec for rec in records if rec.split == 'valid']
        test = records if args.split == 'all' else [rec for rec in records if rec.split == args.split]
        rows = []
        for idx, (label, cfg, aug) in enumerate(ablation_grid(model_cfg, augment_cfg)):
            logger.info('RUNNING: ABLATION %d %s', idx, label)
            pairs = augment_records(records, aug, train_cfg.seed, args.quiet)
            ckpt = training.train(train_cfg, cfg, ([augment.pair_to_record(p) for p in pairs], valid),
                                  os.path.join(out_dir, 'ablation_%d.ckpt' % idx), args.quiet)
            model, vocab = checkpoint.load(ckpt)
            report = evaluate.evaluate(evaluate.make_predictor(model, vocab, beam_cfg), test, quiet=args.quiet)
            rows.append(dict(label, **{'top-%d' % k: helpers.percent(report.hits[k], report.n_records)
                                       for k in report.ks}))
        table = pd.DataFrame(rows)
        helpers.write_atomically(os.path.join(out_dir, 'ablation.tsv'), table.to_csv(sep='\t', index=False))
        sys.stdout.write(table.to_string(index=False) + '\n')
    with_manifest('ablate', train_cfg.seed, resolved_config(model_cfg, train_cfg, augment_cfg, beam_cfg), [args.data],
                  [os.path.join(args.output_dir, 'ablation.tsv')], run)


def cmd_toy_corpus(args):
    out_dir = resolve(args.output_dir)
    reactions_path = os.path.join(out_dir, leaves['toy corpus'])
    parser_path = os.path.join(out_dir, leaves['parser corpus'])

    def run():
        ingest.write_reaction_file(reactions_path, toy_corpus.corpus_lines())
        helpers.write_atomically(parser_path, ''.join(s + '\n' for s in toy_corpus.parser_corpus()))
        logger.info('TOY CORPUS WRITTEN TO %s', out_dir)
    outputs = [os.path.join(args.output_dir, leaves[leaf]) for leaf in ('toy corpus', 'parser corpus')]
    with_manifest('toy-corpus', run_seed(args), {}, [], outputs, run)


def cmd_convert_uspto(args):
    csv_paths = {split: resolve(getattr(args, split)) for split in ingest.SPLITS if getattr(args, split)}
    if not csv_paths:
        raise UsageError('convert-uspto needs at least one of --train, --valid, --test')
    with_manifest('convert-uspto', run_seed(args), {}, list(csv_paths.values()), [args.output],
                  lambda: uspto.convert_uspto(csv_paths, resolve(args.output)))


# ARGUMENTS #

def build_parser():
    common = RetroArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help='seed for every random choice, over the config file (default 0)')
    common.add_argument('--config', help='"key = value" config file')
    common.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    common.add_argument('--quiet', action='store_true', help='no progress bars')

    parser = RetroArgumentParser(prog='retro', description='Graph-prior retrosynthesis Transformer pipeline.')
    commands = parser.add_subparsers(dest='command', metavar='command')

    sub = commands.add_parser('tokenize', parents=[common], help='split SMILES into tokens')
    sub.add_argument('smiles', nargs='*')
    sub.add_argument('--input', help='file with one SMILES per line')
    sub.add_argument('--output')
    sub.set_defaults(func=cmd_tokenize)

    sub = commands.add_parser('emit-priors', parents=[common], help='print the attention priors of one reaction')
    sub.add_argument('--product', required=True)
    sub.add_argument('--reactants')
    sub.add_argument('--output')
    sub.set_defaults(func=cmd_emit_priors)

    sub = commands.add_parser('augment', parents=[common], help='augment the training split of a reaction file')
    sub.add_argument('--input', required=True)
    sub.add_argument('--output', required=True)
    sub.add_argument('--factor', type=int)
    sub.add_argument('--unpaired', action='store_true', help='re-root the product and reactants independently')
    sub.add_argument('--split-ratio')
    sub.set_defaults(func=cmd_augment)

    sub = commands.add_parser('train', parents=[common], help='train a model and write its best checkpoint')
    sub.add_argument('--data', required=True, help='reaction file with train and valid splits')
    sub.add_argument('--augmented', help='augmented training file to train on instead of the train split')
    sub.add_argument('--output', default=os.path.join(artifacts, trunks['models'], 'model.ckpt'))
    sub.add_argument('--split-ratio')
    sub.set_defaults(func=cmd_train)

    for name, func, helptext in (('predict', cmd_predict, 'rank reactant candidates for products'),
                                 ('eval', cmd_eval, 'top-K accuracy on a split'),
                                 ('ablate', cmd_ablate, 'train and evaluate every ablation setting')):
        sub = commands.add_parser(name, parents=[common], help=helptext)
        if name != 'ablate':
            sub.add_argument('--checkpoint', required=True)
        sub.add_argument('--beam', dest='beam_width', type=int)
        sub.add_argument('--topk', type=int)
        sub.add_argument('--max-len', dest='max_len', type=int)
        if name == 'predict':
            sub.add_argument('--input', required=True, help='products, one per line, or a reaction file')
            sub.add_argument('--output')
        else:
            sub.add_argument('--data', required=True)
            sub.add_argument('--split', default='test', choices=list(ingest.SPLITS) + ['all'])
            sub.add_argument('--split-ratio')
        if name == 'eval':
            sub.add_argument('--output')
        if name == 'ablate':
            sub.add_argument('--output-dir', default=os.path.join(artifacts, trunks['reports'], leaves['ablation']))
        sub.set_defaults(func=func)

    sub = commands.add_parser('toy-corpus', parents=[common], help='write the bundled synthetic corpora')
    sub.add_argument('--output-dir', default=os.path.join(artifacts, trunks['data']))
    sub.set_defaults(func=cmd_toy_corpus)

    sub = commands.add_parser('convert-uspto', parents=[common], help='USPTO-50K CSVs to a reaction file')
    for split in ingest.SPLITS:
        sub.add_argument('--' + split, help='%s CSV' % split)
    sub.add_argument('--output', required=True)
    sub.set_defaults(func=cmd_convert_uspto)
    return parser


def main(argv=None):
    """
    :param argv: list of str, the arguments after the program name
    :return: int, exit code
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return UsageError.exit_code
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        sys.stderr.write('retro: error: %s\n' % err)
        return err.exit_code
    except SystemExit as exit_request:
        # --help
        return exit_request.code or 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return UsageError.exit_code

    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')
    try:
        args.func(args)
    except PipelineError as err:
        logger.error('%s: %s', err.reason, err)
        return err.exit_code
    except Exception:
        logger.exception('UNEXPECTED FAILURE')
        return 3
    return 0


if __name__ == '__main__':
    sys.exit(main())
