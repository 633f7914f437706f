"""Numeric self-verification batteries behind the `gradcheck` and
`selftest` CLI subcommands. Each check returns (name, worst_error, bound);
a battery passes when every check is within its bound."""

from __future__ import annotations

import numpy as np

import cassikit.tensor as T
from . import physics as P
from .denoiser import DenoiserConfig, PriorPyramidBuilder, TridentBlock, TridentDenoiser
from .gradcheck import grad_check
from .physics import SensingOperator, ShiftSpec
from .prior import EpsilonMlp, LatentEncoder, diffuse_forward, generate_prior, make_schedule, reverse_step
from .tensor import Tensor
from .unfolding import DscCorrection, UnfoldingConfig, UnfoldingNet, project_gc, run_unfolding

F64 = np.float64

GRAD_BOUND = 1e-4
SEEDS = range(10)


def _rand(rng, shape, grad=False):
    return Tensor(rng.standard_normal(shape), requires_grad=grad, dtype=F64)


def gradcheck_battery(module: str | None = None) -> list[tuple[str, float, float]]:
    """64-bit finite-difference checks per module; a handful of seeds each."""
    results = []

    def run(name, fn, seeds=SEEDS):
        if module is None or name.startswith(module):
            worst = max(fn(seed) for seed in seeds)
            results.append((name, worst, GRAD_BOUND))

    def op_matmul(seed):
        rng = np.random.default_rng(seed)
        b = _rand(rng, (5, 3))
        return grad_check(lambda t: T.sum_(T.matmul(t, b)), _rand(rng, (4, 5), grad=True))

    def op_gelu(seed):
        rng = np.random.default_rng(seed)
        return grad_check(lambda t: T.sum_(T.gelu(t)), _rand(rng, (4, 4), grad=True))

    def op_softmax(seed):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((3, 5))
        return grad_check(lambda t: T.sum_(T.mul(T.softmax(t, axis=-1), w)),
                          _rand(rng, (3, 5), grad=True))

    def op_conv(seed):
        rng = np.random.default_rng(seed)
        x = _rand(rng, (1, 2, 8, 8))
        return grad_check(lambda t: T.sum_(T.conv2d(x, t, dilation=2, padding=(2, 4))),
                          _rand(rng, (3, 2, 3, 5), grad=True))

    def op_resample(seed):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((1, 2, 8, 12))
        return grad_check(lambda t: T.sum_(T.mul(T.bilinear_up2(t), w)),
                          _rand(rng, (1, 2, 4, 6), grad=True))

    def op_dsc(seed):
        from .nn import DscBlock
        rng = np.random.default_rng(seed)
        blk = DscBlock(3, rng=rng, dtype=F64)
        return grad_check(lambda t: T.sum_(blk(t)), _rand(rng, (1, 3, 6, 6), grad=True))

    run("tensor_core/matmul", op_matmul)
    run("tensor_core/gelu", op_gelu)
    run("tensor_core/softmax", op_softmax)
    run("tensor_core/conv2d", op_conv)
    run("tensor_core/resample", op_resample)
    run("tensor_core/dsc_block", op_dsc)

    def op_project_gc(seed):
        rng = np.random.default_rng(seed)
        mask = P.make_mask(seed + 7, 4, 4).astype(F64)
        op = SensingOperator(mask, 3, ShiftSpec(1))
        dsc = DscCorrection(3, rng=rng, dtype=F64)
        dsc.pw2.weight.data[:] = 0.1 * rng.standard_normal(dsc.pw2.weight.shape)
        v = _rand(rng, (3, op.shifted_height, 4))
        y = _rand(rng, (op.shifted_height, 4))

        def f(theta):
            out = project_gc(v, y, op, dsc)
            return T.sum_(T.mul(out, out))

        return grad_check(f, dsc.pw1.weight)

    run("gap_unfolding/project_gc", op_project_gc)

    def op_trident(seed):
        rng = np.random.default_rng(seed)
        blk = TridentBlock(4, 3, 1, (4, 4), rng=rng, dtype=F64)
        z = _rand(rng, (1, 4, 3))
        return grad_check(lambda t: T.sum_(blk(t, z)), _rand(rng, (1, 4, 4, 4), grad=True))

    run("trident_denoiser/block", op_trident)

    def op_eps(seed):
        rng = np.random.default_rng(seed)
        mlp = EpsilonMlp(4, rng=rng, dtype=F64)
        mlp.head.weight.data[:] = 0.1 * rng.standard_normal(mlp.head.weight.shape)
        z = _rand(rng, (1, 3, 4))
        c = _rand(rng, (1, 3, 4))
        return grad_check(lambda t: T.sum_(T.abs_(mlp(z, c, 2))), mlp.fc_in.weight)

    def op_chain(seed):
        rng = np.random.default_rng(seed)
        mlp = EpsilonMlp(4, rng=rng, dtype=F64)
        mlp.head.weight.data[:] = 0.05 * rng.standard_normal(mlp.head.weight.shape)
        sch = make_schedule(4)
        c = _rand(rng, (1, 3, 4))

        def f(theta):
            zhat = generate_prior(c, sch, mlp, np.random.default_rng(seed + 1))
            return T.mean(T.abs_(zhat))

        return grad_check(f, mlp.head.weight)

    run("latent_prior/epsilon_mlp", op_eps)
    run("latent_prior/chain", op_chain)

    def _tiny_net(rng, stages):
        mask = P.make_mask(int(rng.integers(1 << 16)), 8, 8).astype(F64)
        op = SensingOperator(mask, 2, ShiftSpec(0))
        dcfg = DenoiserConfig(bands=2, base_channels=8, heads=(1, 1, 1),
                              latent_tokens=16, latent_channels=8, nominal_hw=(8, 8))
        net = UnfoldingNet(UnfoldingConfig(stages=stages, denoiser=dcfg), rng, dtype=F64)
        for den in net.denoisers:
            den.out.weight.data[:] = 0.02 * rng.standard_normal(den.out.weight.shape)
        for corr in net.corrections:
            corr.pw2.weight.data[:] = 0.1 * rng.standard_normal(corr.pw2.weight.shape)
        return op, net

    def op_full_unfolding(seed):
        # theta inside the stage denoiser: the whole composition is exercised
        rng = np.random.default_rng(seed)
        op, net = _tiny_net(rng, stages=1)
        y = _rand(rng, (op.shifted_height, 8))
        z = _rand(rng, (16, 8))
        theta = net.denoisers[0].up1.bias

        def f(t):
            xhat = run_unfolding(y, op, net, z)
            return T.mean(T.abs_(xhat))

        return grad_check(f, theta)

    def op_two_stage_correction(seed):
        # v0 = project(0) makes the stage-1 residual identically zero, so the
        # correction grads are only observable from the second stage onward
        rng = np.random.default_rng(seed)
        op, net = _tiny_net(rng, stages=2)
        y = _rand(rng, (op.shifted_height, 8))
        z = _rand(rng, (16, 8))
        theta = net.corrections[1].pw1.weight

        def f(t):
            xhat = run_unfolding(y, op, net, z)
            return T.mean(T.abs_(xhat))

        return grad_check(f, theta)

    run("gap_unfolding/full_one_stage", op_full_unfolding)
    run("gap_unfolding/two_stage_correction", op_two_stage_correction, seeds=range(3))
    return results


def selftest_battery() -> list[tuple[str, float, float]]:
    """Dense-operator equivalence, diffusion statistics, attention oracles."""
    results = []
    rng = np.random.default_rng(0)

    worst = 0.0
    for step in (0, 1, 2):
        for (w, h, l) in [(4, 4, 2), (5, 5, 3), (6, 6, 4)]:
            mask = P.make_mask(17 + w + step, h, w).astype(F64)
            op = SensingOperator(mask, l, ShiftSpec(step))
            a = P.dense_sensing_matrix(op)
            x = rng.random((l, h, w))
            y = rng.random((op.shifted_height, w))
            worst = max(worst, float(np.abs(op.forward(x) - (a @ x.ravel()).reshape(y.shape)).max()))
            worst = max(worst, float(np.abs(op.adjoint(y) - (a.T @ y.ravel()).reshape(x.shape)).max()))
            phi = np.einsum("ij,ij->i", a, a).reshape(y.shape)
            worst = max(worst, float(np.abs(op.phi_diag - phi).max()))
    results.append(("dense_operator_equivalence", worst, 1e-6))

    sch = make_schedule(16)
    z0 = rng.standard_normal(6)
    t = 9
    n = 10_000
    eps = rng.standard_normal((n, 6))
    samples = np.sqrt(sch.alpha_bar(t)) * z0 + np.sqrt(1 - sch.alpha_bar(t)) * eps
    ab = sch.alpha_bar(t)
    mean_err = float(np.abs(samples.mean(axis=0) - np.sqrt(ab) * z0).max())
    results.append(("diffusion_mc_mean", mean_err, 3 * np.sqrt((1 - ab) / n)))
    var_err = float(np.abs(samples.var(axis=0, ddof=1) - (1 - ab)).max())
    results.append(("diffusion_mc_var", var_err, 3 * (1 - ab) * np.sqrt(2.0 / (n - 1))))

    z0m = rng.standard_normal((4, 8))
    epsm = rng.standard_normal((4, 8))
    zt = diffuse_forward(z0m, 7, epsm, sch)
    got = reverse_step(zt, 7, None, lambda z, c, tt: epsm, sch)
    a7, ab7, abp = sch.alpha(7), sch.alpha_bar(7), sch.alpha_bar(6)
    mu = (np.sqrt(abp) * (1 - a7) / (1 - ab7)) * z0m + (np.sqrt(a7) * (1 - abp) / (1 - ab7)) * zt
    results.append(("reverse_posterior_mean", float(np.abs(got - mu).max()), 1e-6))

    worst_sched = max(float(make_schedule(steps).alpha_bars[-1]) for steps in (2, 4, 8, 16))
    results.append(("schedule_alpha_bar_T", worst_sched, 1e-4))

    from .denoiser import AcsAttention, CrossPriorAttention
    attn = AcsAttention(2, 1, (4, 4), rng=rng, dtype=F64)
    u = rng.standard_normal((1, 2, 4, 4))
    gate = rng.standard_normal((1, 4))
    psv = rng.standard_normal((1, 4, 4, 4))
    out, v = attn(Tensor(u, dtype=F64), Tensor(gate, dtype=F64), Tensor(psv, dtype=F64))
    q = T.conv2d(Tensor(u, dtype=F64), attn.to_q.weight, stride=2, padding=1).data[0].reshape(4, 4)
    k = T.conv2d(Tensor(u, dtype=F64), attn.to_k.weight, stride=2, padding=1).data[0].reshape(4, 4)
    logits = (q @ k.T) * gate[0][:, None] / np.exp(attn.log_alpha.data[0])
    aw = np.exp(logits - logits.max(axis=1, keepdims=True))
    aw /= aw.sum(axis=1, keepdims=True)
    vf = v.data[0].reshape(4, 16)
    mixed = (aw @ vf).reshape(1, 4, 4, 4) * psv
    ref = T.conv2d(Tensor(mixed, dtype=F64), attn.proj.weight).data
    results.append(("acs_attention_oracle", float(np.abs(out.data - ref).max()), 1e-5))
    results.append(("acs_softmax_rows", float(np.abs(aw.sum(axis=1) - 1.0).max()), 1e-6))

    cpf = CrossPriorAttention(2, 3, 1, rng=rng, dtype=F64)
    z = rng.standard_normal((1, 4, 3))
    qg = rng.standard_normal((1, 4, 4, 4))
    out = cpf(Tensor(qg, dtype=F64), Tensor(z, dtype=F64)).data
    kz = z[0] @ cpf.to_k.weight.data
    vz = z[0] @ cpf.to_v.weight.data
    qtok = qg[0].reshape(4, 16).T
    logits = qtok @ kz.T / np.exp(cpf.log_alpha.data[0])
    aw = np.exp(logits - logits.max(axis=1, keepdims=True))
    aw /= aw.sum(axis=1, keepdims=True)
    mixed = (aw @ vz).T.reshape(1, 4, 4, 4)
    ref = T.conv2d(Tensor(mixed, dtype=F64), cpf.proj.weight).data
    results.append(("cpf_attention_oracle", float(np.abs(out - ref).max()), 1e-5))
    return results


def format_results(results: list[tuple[str, float, float]]) -> tuple[str, bool]:
    lines = []
    ok = True
    for name, err, bound in results:
        passed = err <= bound
        ok = ok and passed
        lines.append(f"{'PASS' if passed else 'FAIL'}  {name:36s} err={err:.3e} bound={bound:.1e}")
    return "\n".join(lines), ok
