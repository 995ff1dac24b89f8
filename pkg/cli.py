import dataclasses
import functools
import json
import logging
import sys
from fractions import Fraction

import click

import costs
import kernels
import models
import modexp
import periodfind
import physical
import residue
from app import configure_logging, settings
from exceptions import QFEError


class IntRange(click.ParamType):
    """An integer or an inclusive range written a:b."""
    name = "range"

    def convert(self, value, param, ctx):
        if isinstance(value, range):
            return value
        try:
            if ":" in str(value):
                low, high = (int(x) for x in str(value).split(":"))
            else:
                low = high = int(value)
        except ValueError:
            self.fail(f"'{value}' is not an integer or a range a:b", param, ctx)
        if high < low:
            self.fail(f"range '{value}' is empty", param, ctx)
        return range(low, high + 1)


INT_RANGE = IntRange()


def _jsonable(value):
    if isinstance(value, Fraction):
        return float(value)
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, range):
        return [value.start, value.stop - 1]
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def _dump_json(data, stream):
    json.dump(data, stream, indent=2, default=_jsonable)
    stream.write("\n")


def read_modulus(modulus_hex=None, modulus_file=None, default_file=None):
    """Modulus from a hex flag or a file holding it in decimal or 0x-prefixed hex."""
    if modulus_hex:
        return int(modulus_hex.removeprefix("0x"), 16)
    path = modulus_file or default_file
    if not path:
        return None
    with open(path) as handle:
        text = "".join(handle.read().split())
    if text.startswith("0x"):
        return int(text[2:], 16)
    return int(text, 10) if text.isdigit() else int(text, 16)


def handle_errors(command):
    """Turn library errors into a logged diagnostic and the error's exit code."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except QFEError as exc:
            logging.error(f"{command.__name__}: {exc}")
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
    return wrapper


def _store(ctx, rows):
    url = ctx.obj.get("db")
    if not url:
        return
    result = models.store(rows, url)
    if not result['success']:
        click.echo(f"warning: {result['message']}", err=True)


def param_options(ranged):
    """Shared --s/--ell/--w1/--w3/--w4/--f options, as ranges for scans."""
    kind = INT_RANGE if ranged else int

    def decorate(command):
        for name in reversed(("s", "ell", "w1", "w3", "w4", "f")):
            command = click.option(f"--{name}", type=kind, default=None,
                                   help=f"{name} (single value{' or a:b' if ranged else ''})")(command)
        command = click.option("--register-convention", type=click.Choice(modexp.REGISTER_CONVENTIONS),
                               default="symbols")(command)
        command = click.option("--prime-bits-denominator",
                               type=click.Choice(modexp.PRIME_BITS_DENOMINATORS), default="ell")(command)
        command = click.option("--loop3-address", type=click.Choice(modexp.LOOP3_ADDRESSES),
                               default="joint")(command)
        command = click.option("--loop4-temporary", type=click.Choice(modexp.LOOP4_TEMPORARIES),
                               default="shared")(command)
        return command
    return decorate


def _switches(kwargs):
    return {key: kwargs.pop(key) for key in
            ("register_convention", "prime_bits_denominator", "loop3_address", "loop4_temporary")}


@click.group()
@click.option("--log-level", default=None, help="Overrides QFE_LOG_LEVEL.")
@click.option("--db", default=None, help="SQLAlchemy URL of the result store.")
@click.option("--seed", type=int, default=None, help="Root seed (defaults to QFE_SEED).")
@click.option("--threads", type=int, default=None, help="Worker cap (defaults to QFE_THREADS).")
@click.pass_context
def qfe(ctx, log_level, db, seed, threads):
    """Resource estimates and desk-scale checks for approximate residue arithmetic factoring."""
    if log_level:
        configure_logging(log_level)
    ctx.ensure_object(dict)
    ctx.obj.update(db=db or settings.database_url,
                   seed=settings.seed if seed is None else seed, threads=threads)


@qfe.command()
@click.option("--n", "n", type=int, required=True, help="Modulus width in bits.")
@param_options(ranged=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--out", type=click.File("w"), default="-")
@click.pass_context
@handle_errors
def scan(ctx, n, fmt, out, **kwargs):
    """Grid scan of parameters with Pareto flags and the q^3 t optimum."""
    switches = _switches(kwargs)
    ranges = {key: value for key, value in kwargs.items() if value is not None}
    estimates = costs.grid_scan(n, ranges, workers=ctx.obj["threads"], **switches)
    frontier = costs.pareto(estimates)
    if fmt == "csv":
        costs.write_csv(estimates, out, frontier)
    else:
        costs.write_json(estimates, out, frontier)
    best = costs.q3t_optimum(estimates)
    p = best.params
    click.echo(f"q3t optimum: s={p.s} ell={p.ell} w1={p.w1} w3={p.w3} w4={p.w4} f={p.f} "
               f"qubits={best.logical_qubits} toffolis={best.expected_toffolis:.3e}", err=True)
    if ctx.obj["db"]:
        _store(ctx, models.scan_rows(models.new_run_id(), costs.estimate_rows(estimates, frontier)))


def _params_from(n, kwargs, defaults=None):
    switches = _switches(kwargs)
    values = dict(defaults or {})
    values.update({key: value for key, value in kwargs.items() if value is not None})
    missing = [key for key in ("s", "ell", "w1", "w3", "w4", "f") if key not in values]
    if missing:
        raise click.UsageError(f"missing parameters: {', '.join('--' + m for m in missing)}")
    return modexp.AlgorithmParams(n=n, **values, **switches).validate()


@qfe.command()
@click.option("--n", "n", type=int, required=True)
@param_options(ranged=False)
@click.option("--prime-count", type=int, default=None, help="Actual |P| instead of the estimate.")
@click.option("--out", type=click.File("w"), default="-")
@click.pass_context
@handle_errors
def estimate(ctx, n, prime_count, out, **kwargs):
    """Logical and physical cost report for one parameter point."""
    params = _params_from(n, kwargs)
    cost = costs.estimate(params, prime_count)
    sub_tally = costs.tally(params, cost.prime_count)
    _, profile = costs.logical_qubits(params)
    report = {
        "logical": {
            **cost.as_row(),
            "prime_count": cost.prime_count,
            "epsilon": cost.epsilon,
            "toffolis_per_shot": cost.toffolis_per_shot,
            "tally": [{"name": row.name, "iterations": row.iterations, **row.totals}
                      for row in sub_tally.rows],
            "qubit_profile": [dataclasses.asdict(row) for row in profile],
        },
        "physical": physical.physical_report(cost),
    }
    _dump_json(report, out)


@qfe.command()
@click.option("--modulus-hex", default=None)
@click.option("--modulus-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--bits", type=int, default=32, help="Width of a generated semiprime.")
@click.option("--g", "g", type=int, default=2)
@click.option("--mode", type=click.Choice(["shor", "eh"]), default="shor")
@param_options(ranged=False)
@click.option("--shots", type=int, default=100)
@click.option("--budget", type=int, default=1_000_000, help="Prime search swap budget.")
@click.option("--inject-bug", type=click.Choice(modexp.INJECTABLE_BUGS), default=None)
@click.option("--trace-out", type=click.File("w"), default=None)
@click.option("--out", type=click.File("w"), default="-")
@click.pass_context
@handle_errors
def simulate(ctx, modulus_hex, modulus_file, bits, g, mode, shots, budget, inject_bug,
             trace_out, out, **kwargs):
    """Fuzz seeded shots against the classical oracle and the symbolic tally."""
    seed = ctx.obj["seed"]
    N = read_modulus(modulus_hex, modulus_file) or residue.random_semiprime(bits, seed)
    n = residue.Modulus(N).bit_length
    if n > 64:
        raise click.UsageError(f"simulation is limited to 64-bit moduli, got {n} bits")
    params = _params_from(n, kwargs, modexp.DESK_PARAMS)
    config = modexp.build_config(N, g, params, mode=mode, seed=seed, budget=budget,
                                 workers=ctx.obj["threads"])
    seeds = range(seed, seed + shots)
    records = modexp.run_shots(config, seeds, workers=ctx.obj["threads"], inject_bug=inject_bug)
    for record in records:
        out.write(modexp.serialize_shot(record) + "\n")
    if trace_out is not None:
        traced = modexp.run_shot(config, seed, trace=True, inject_bug=inject_bug,
                                 raise_on_dirty=False)
        trace_out.write("\n".join(traced.trace or []) + "\n")

    sub_tally = costs.tally(config.params, config.prime_count)
    failures = []
    for record in records:
        if record.error:
            failures.append(f"seed {record.seed}: {record.error}")
        elif not record.matches_oracle:
            failures.append(f"seed {record.seed}: measured {record.measurement}, "
                            f"oracle {record.expected_measurement}")
        else:
            mismatches = costs.tally_mismatches(sub_tally, record.counters)
            if mismatches:
                section, kind, tallied, got = mismatches[0]
                failures.append(f"seed {record.seed}: {section} {kind} counted {got}, "
                                f"tallied {tallied}")
    if ctx.obj["db"]:
        _store(ctx, models.shot_rows(models.new_run_id(), N, records))
    if failures:
        logging.error(f"{len(failures)} of {len(records)} shots failed")
        click.echo(f"FAIL {len(failures)}/{len(records)}; first: {failures[0]}", err=True)
        sys.exit(1)
    click.echo(f"PASS {len(records)}/{len(records)} shots on N={N:#x} ({n} bits)", err=True)


@qfe.command()
@click.option("--N", "N", type=int, default=None, help="Single instance modulus.")
@click.option("--g", "g", type=int, default=None)
@click.option("--instances", type=int, default=10, help="Generated instances when --N is absent.")
@click.option("--max-N", "max_N", type=int, default=periodfind.MAX_MODULUS)
@click.option("--S", "S", type=float, multiple=True, default=(0.1, 0.01))
@click.option("--shots", type=int, default=10_000)
@click.option("--estimator", type=click.Choice(["conditional", "sampled"]), default="conditional")
@click.option("--likelihood/--no-likelihood", default=False,
              help="Also report the 100x likelihood ratio interval.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--out", type=click.File("w"), default="-")
@click.pass_context
@handle_errors
def mask(ctx, N, g, instances, max_N, S, shots, estimator, likelihood, fmt, out):
    """Success suppression from superposition masking on small instances."""
    seed = ctx.obj["seed"]
    if N is not None:
        if g is None:
            raise click.UsageError("--g is required with --N")
        cases = [(N, g)]
    else:
        cases = periodfind.small_instances(instances, seed, max_N)
    results = periodfind.run_suppression_grid(cases, S, shots, seed, estimator, likelihood,
                                              workers=ctx.obj["threads"])
    if fmt == "csv":
        periodfind.write_csv(results, out)
    else:
        _dump_json(periodfind.as_dicts(results), out)
    if ctx.obj["db"]:
        _store(ctx, models.mask_rows(models.new_run_id(), results))
    below = [r for r in results if r.S in periodfind.SUPPRESSION_FLOORS
             and r.suppression < periodfind.SUPPRESSION_FLOORS[r.S]]
    if below:
        r = below[0]
        click.echo(f"FAIL: N={r.N} g={r.g} S={r.S} suppression {r.suppression:.4f} below "
                   f"{periodfind.SUPPRESSION_FLOORS[r.S]}", err=True)
        sys.exit(1)


@qfe.command(name="kernels")
@click.option("--data-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--out", type=click.File("w"), default="-")
@click.pass_context
@handle_errors
def kernels_command(ctx, data_dir, out):
    """Circuit identity checks and the phase gradient tables."""
    report = kernels.run_kernel_suite(ctx.obj["seed"], data_dir)
    _dump_json(report, out)
    for target, table in report["gradient_tables"].items():
        click.echo(f"gradient {target}: {table['t_count']} T, "
                   f"total infidelity {table['total_infidelity']:.2e}", err=True)
    if not report["passed"]:
        sys.exit(1)


@qfe.command()
@click.option("--modulus-hex", default=None)
@click.option("--modulus-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--bits", type=int, default=128, help="Width of a generated semiprime.")
@click.option("--ell", type=int, default=22)
@click.option("--f", "f", type=int, default=16)
@click.option("--W1", "W1", type=int, default=1, help="Products of W1 values below N must fit.")
@click.option("--budget", type=int, default=1_000_000)
@click.option("--challenge", is_flag=True,
              help="Certify a modulus (default RSA-2048) against the published 22-bit prime set.")
@click.option("--out", type=click.File("w"), default="-")
@click.pass_context
@handle_errors
def primes(ctx, modulus_hex, modulus_file, bits, ell, f, W1, budget, challenge, out):
    """Search for (or certify) a residue prime set with small modular deviation."""
    seed = ctx.obj["seed"]
    N = read_modulus(modulus_hex, modulus_file, settings.challenge_modulus_file)
    if challenge:
        N = N or residue.RSA2048_MODULUS
        certified, deviation = residue.certify_challenge_modulus(N)
        click.echo(f"deviation {float(deviation):.6e} "
                   f"({'certified' if certified else 'NOT certified'})")
        sys.exit(0 if certified else 1)
    N = N or residue.random_semiprime(bits, seed)
    system = residue.find_prime_set_with_retry(N, W1, ell, f, seed=seed, budget=budget,
                                               workers=ctx.obj["threads"])
    text = residue.serialize_system(system, N)
    out.write(text)
    if ctx.obj["db"]:
        _store(ctx, [models.certificate_row(system, N, text)])
    if not residue.verify_system(system, N):
        click.echo("certificate failed independent recomputation", err=True)
        sys.exit(1)


@qfe.command()
@click.option("--out", type=click.File("w"), default="-")
@handle_errors
def reproduce(out):
    """Model values next to the published logical cost table, plus the physical headline."""
    report = costs.reproduction_report()
    out.write(f"{'n':>5} {'m':>11} {'P_dev %':>15} {'shots':>11} {'toffolis':>19} {'qubits':>11}\n")
    for row in report:
        m, p_dev, shots, tof, qubits = (row[key] for key in
                                         ("m", "P_deviant", "expected_shots", "toffolis", "qubits"))
        out.write(f"{row['n']:>5} {m[0]:>5}/{m[1]:<5} {100 * p_dev[0]:>7.3f}/{100 * p_dev[1]:<7.2f} "
                  f"{shots[0]:>5.2f}/{shots[1]:<5} {tof[0]:>9.3e}/{tof[1]:<9.1e} "
                  f"{qubits[0]:>5}/{qubits[1]:<5}\n")
    headline = next(r for r in costs.published_rows() if r["params"].n == 2048)
    phys = physical.physical_report(costs.estimate(headline["params"]))["estimate"]
    out.write(f"n=2048 physical: {phys['total_qubits']} qubits, {phys['shot_hours']:.2f} h per shot, "
              f"{phys['expected_days']:.2f} days\n")


def main(argv=None):
    qfe.main(args=argv, prog_name="qfe")
