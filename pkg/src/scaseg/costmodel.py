"""Analytic parameter and multiply-accumulate accounting.

Counting rules: a conv contributes C_in/groups * C_out * k^2 weights plus
C_out biases and C_in/groups * C_out * k^2 * h_out * w_out MACs; a linear
d_in * d_out (+ d_out) over its token count; a norm contributes 2C
parameters and zero MACs (running stats are buffers, not parameters).
Softmax, activations, and resampling are listed as zero-MAC lines so the
breakdown still names every stage. MAC totals follow the vision
literature's convention of reporting one MAC as one FLOP.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

from .config import DecoderConfig, EncoderConfig, FullConfig
from .errors import ConfigError


@dataclass
class CostReport:
    height: int
    width: int
    entries: list = field(default_factory=list)  # (path, params, macs)

    @property
    def params(self) -> int:
        return sum(e[1] for e in self.entries)

    @property
    def macs(self) -> int:
        return sum(e[2] for e in self.entries)

    def add(self, path: str, params: int, macs: int):
        self.entries.append((path, int(params), int(macs)))

    def subtotal(self, prefix: str):
        params = sum(e[1] for e in self.entries if e[0].startswith(prefix))
        macs = sum(e[2] for e in self.entries if e[0].startswith(prefix))
        return params, macs

    def to_text(self) -> str:
        width = max(len(e[0]) for e in self.entries) if self.entries else 6
        width = max(width, len("module"))
        lines = [f"{'module':<{width}}  {'params':>12}  {'macs':>16}"]
        for path, params, macs in self.entries:
            lines.append(f"{path:<{width}}  {params:>12}  {macs:>16}")
        lines.append(f"{'total':<{width}}  {self.params:>12}  {self.macs:>16}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("module,params,macs\n")
        for path, params, macs in self.entries:
            out.write(f"{path},{params},{macs}\n")
        out.write(f"total,{self.params},{self.macs}\n")
        return out.getvalue()


def _conv(report, path, c_in, c_out, k, h, w, groups=1, bias=True):
    weights = (c_in // groups) * c_out * k * k
    params = weights + (c_out if bias else 0)
    report.add(path, params, weights * h * w)


def _bn(report, path, channels):
    report.add(path, 2 * channels, 0)


def _ln(report, path, channels):
    report.add(path, 2 * channels, 0)


def _linear(report, path, d_in, d_out, tokens, bias=True):
    params = d_in * d_out + (d_out if bias else 0)
    report.add(path, params, d_in * d_out * tokens)


def _conv_bn(report, path, c_in, c_out, k, h, w, bias=True):
    _conv(report, f"{path}.conv", c_in, c_out, k, h, w, bias=bias)
    _bn(report, f"{path}.bn", c_out)


def _attention(report, path, kv_dim, q_dim, embed, n_q, n_kv, bias=True):
    _linear(report, f"{path}.w_q", q_dim, embed, n_q, bias)
    _linear(report, f"{path}.w_k", kv_dim, embed, n_kv, bias)
    _linear(report, f"{path}.w_v", kv_dim, embed, n_kv, bias)
    report.add(f"{path}.scores", 0, n_q * n_kv * embed)
    report.add(f"{path}.softmax", 0, 0)
    report.add(f"{path}.values", 0, n_q * n_kv * embed)
    _linear(report, f"{path}.w_o", embed, q_dim, n_q, bias)


def _mix_ffn(report, path, channels, h, w):
    hidden = 4 * channels
    _conv(report, f"{path}.fc1", channels, hidden, 1, h, w)
    _conv(report, f"{path}.dw", hidden, hidden, 3, h, w, groups=hidden)
    report.add(f"{path}.gelu", 0, 0)
    _conv(report, f"{path}.fc2", hidden, channels, 1, h, w)


def _sca_stage(report, path, kv_dim, q_dim, embed, heads, h, w, bias=True):
    n = h * w
    _ln(report, f"{path}.ln_kv", kv_dim)
    _ln(report, f"{path}.ln_q", q_dim)
    _attention(report, f"{path}.attn", kv_dim, q_dim, embed, n, n, bias)
    _ln(report, f"{path}.ln_ffn", q_dim)
    _mix_ffn(report, f"{path}.ffn", q_dim, h, w)


def _encoder_costs(report, cfg: EncoderConfig, H, W):
    c_prev = 3
    h, w = H, W
    for i, c in enumerate(cfg.channels):
        stride = 4 if i == 0 else 2
        h, w = h // stride, w // stride
        _conv_bn(report, f"encoder.stage{i + 1}.down", c_prev, c, 3, h, w)
        for b in range(cfg.blocks_per_stage):
            _conv_bn(report, f"encoder.stage{i + 1}.block{b}", c, c, 3, h, w)
        c_prev = c


def _decoder_costs(report, channels, cfg: DecoderConfig, H, W):
    gh, gw = H // 64, W // 64
    n = gh * gw
    report.add("decoder.resize", 0, 0)

    if cfg.attention_variant == "self-on-concat":
        total = sum(channels)
        embed = cfg.ase_embed_dim or total
        for l in range(cfg.num_blocks):
            _sca_stage(report, f"decoder.ase.block{l + 1}", total, total,
                       embed, cfg.heads[0], gh, gw, cfg.attention_bias)
    else:
        for l in range(cfg.num_blocks):
            for t in range(3):
                kv_dim, q_dim = channels[t], channels[t + 1]
                embed = cfg.ase_embed_dim or q_dim
                _sca_stage(report,
                           f"decoder.ase.block{l + 1}.level{t + 2}",
                           kv_dim, q_dim, embed, cfg.heads[t], gh, gw,
                           cfg.attention_bias)

    for j in (2, 3, 4):
        c = channels[j - 1]
        fh, fw = H // 2 ** (j + 1), W // 2 ** (j + 1)
        report.add(f"decoder.scm{j}.upsample", 0, 0)
        _conv_bn(report, f"decoder.scm{j}.proj_f", c, c, 1, fh, fw)
        _conv_bn(report, f"decoder.scm{j}.proj_s", c, c, 1, fh, fw)
        report.add(f"decoder.scm{j}.combine", 0, 0)

    ch = cfg.head_channels
    h4, w4 = H // 4, W // 4
    for idx, c in enumerate(channels):
        fh, fw = H // 2 ** (idx + 2), W // 2 ** (idx + 2)
        _conv_bn(report, f"decoder.head.proj{idx + 1}", c, ch, 1, fh, fw)
        report.add(f"decoder.head.proj{idx + 1}.upsample", 0, 0)
    _conv_bn(report, "decoder.head.fuse", 4 * ch, ch, 1, h4, w4)
    _conv(report, "decoder.head.classifier", ch, cfg.num_classes, 1, h4, w4)
    report.add("decoder.head.upsample", 0, 0)


def cost_report(cfg: FullConfig, H: int | None = None, W: int | None = None,
                include_encoder: bool = True) -> CostReport:
    """Full analytic cost breakdown at resolution (H, W)."""
    H = cfg.encoder.height if H is None else H
    W = cfg.encoder.width if W is None else W
    if H % 64 or W % 64:
        raise ConfigError(f"resolution {H}x{W} must be divisible by 64")
    cfg.encoder.validate()
    cfg.decoder.validate()
    report = CostReport(H, W)
    if include_encoder:
        _encoder_costs(report, cfg.encoder, H, W)
    _decoder_costs(report, cfg.encoder.channels, cfg.decoder, H, W)
    return report


def count_params(cfg: FullConfig) -> CostReport:
    return cost_report(cfg)


def count_macs(cfg: FullConfig, H: int, W: int) -> CostReport:
    return cost_report(cfg, H, W)


@dataclass
class AblationTable:
    axis: str
    rows: list  # (setting, params, macs)

    def to_text(self) -> str:
        width = max(len("setting"), max(len(str(r[0])) for r in self.rows))
        lines = [f"{'setting':<{width}}  {'params':>12}  {'macs':>16}"]
        for setting, params, macs in self.rows:
            lines.append(f"{setting!s:<{width}}  {params:>12}  {macs:>16}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("setting,params,macs\n")
        for setting, params, macs in self.rows:
            out.write(f"{setting},{params},{macs}\n")
        return out.getvalue()


def _variants_for_axis(axis: str, base: FullConfig):
    from dataclasses import replace
    dec = base.decoder
    if axis == "blocks":
        return [(str(l), replace(dec, num_blocks=l)) for l in range(1, 6)]
    if axis == "attention":
        return sorted(
            (name, replace(dec, attention_variant=name))
            for name in ("successive", "plain-cross", "self-on-concat"))
    if axis == "scm":
        return sorted(
            (name, replace(dec, scm_variant=name))
            for name in ("eq6", "eq7", "eq8"))
    if axis == "variant":
        rows = _variants_for_axis("attention", base)
        rows += [(f"scm-{n}", d) for n, d in _variants_for_axis("scm", base)]
        return rows
    raise ConfigError(f"unknown ablation axis {axis!r}")


def ablation_table(base: FullConfig, axis: str, H: int, W: int) -> AblationTable:
    """Rows of (setting, params, macs) along one configuration axis."""
    rows = []
    for setting, dec_cfg in _variants_for_axis(axis, base):
        cfg = FullConfig(encoder=base.encoder, decoder=dec_cfg, train=base.train)
        report = cost_report(cfg, H, W)
        rows.append((setting, report.params, report.macs))
    return AblationTable(axis, rows)
