"""Binary weight files and C source generation for the trained actor.

Weights file layout (all integers little-endian)::

    magic      4 bytes   b"QRLW"
    version    uint32
    n_sizes    uint32
    sizes      uint32 x n_sizes
    hidden     uint8     activation tag (0 linear, 1 tanh)
    output     uint8     activation tag
    payload    float64 x n_params, per layer W (row-major, out x in) then b
    checksum   32 bytes  SHA-256 of every preceding byte
"""

from __future__ import annotations

import ctypes
import hashlib
import shutil
import struct
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import Mlp, split_layers

MAGIC = b"QRLW"
FORMAT_VERSION = 1
ACTIVATION_TAGS = {"linear": 0, "tanh": 1}
_TAG_NAMES = {v: k for k, v in ACTIVATION_TAGS.items()}
_CHECKSUM_LEN = 32


class WeightsFileError(ValueError):
    """Base class for unreadable weight files."""


class ChecksumError(WeightsFileError):
    pass


class TruncatedFileError(WeightsFileError):
    pass


class VersionError(WeightsFileError):
    pass


def encode_weights(net: Mlp) -> bytes:
    if not np.all(np.isfinite(net.params)):
        raise ValueError("network has non-finite parameters")
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, len(net.sizes))
    header += struct.pack(f"<{len(net.sizes)}I", *net.sizes)
    header += struct.pack("<BB", ACTIVATION_TAGS[net.hidden], ACTIVATION_TAGS[net.output])
    body = header + net.params.astype("<f8").tobytes()
    return body + hashlib.sha256(body).digest()


def decode_weights(blob: bytes) -> Mlp:
    if len(blob) < 12:
        raise TruncatedFileError(f"file holds {len(blob)} bytes, shorter than the header")
    if blob[:4] != MAGIC:
        raise WeightsFileError("not a weights file (bad magic)")
    version, n_sizes = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"weights format version {version} is not supported (expected {FORMAT_VERSION})")
    offset = 12
    if len(blob) < offset + 4 * n_sizes + 2:
        raise TruncatedFileError("file ends inside the layer table")
    sizes = list(struct.unpack_from(f"<{n_sizes}I", blob, offset))
    offset += 4 * n_sizes
    hidden_tag, output_tag = struct.unpack_from("<BB", blob, offset)
    offset += 2
    n_params = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    expected = offset + 8 * n_params + _CHECKSUM_LEN
    if len(blob) < expected:
        raise TruncatedFileError(f"file holds {len(blob)} bytes, layer table implies {expected}")
    if len(blob) > expected:
        raise WeightsFileError(f"{len(blob) - expected} trailing bytes after checksum")
    body, digest = blob[:-_CHECKSUM_LEN], blob[-_CHECKSUM_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch; file is corrupt")
    if hidden_tag not in _TAG_NAMES or output_tag != ACTIVATION_TAGS["linear"]:
        raise WeightsFileError(f"unsupported activation tags {hidden_tag}, {output_tag}")
    net = Mlp(sizes, hidden=_TAG_NAMES[hidden_tag])
    net.params[...] = np.frombuffer(blob, dtype="<f8", count=n_params, offset=offset)
    return net


def weights_checksum(net: Mlp) -> str:
    return encode_weights(net)[-_CHECKSUM_LEN:].hex()


def save_weights(net: Mlp, path) -> str:
    """Write ``net`` to ``path``; returns the hex checksum."""
    blob = encode_weights(net)
    Path(path).write_bytes(blob)
    return blob[-_CHECKSUM_LEN:].hex()


def load_weights(path) -> Mlp:
    return decode_weights(Path(path).read_bytes())


@dataclass(frozen=True)
class GeneratedSource:
    text: str
    precision: str
    sizes: tuple[int, ...]
    checksum: str

    @property
    def multiply_adds(self) -> int:
        return sum(i * o + o for i, o in zip(self.sizes[:-1], self.sizes[1:]))

    def write(self, path) -> None:
        Path(path).write_text(self.text)


def _literal(x: float, precision: str) -> str:
    if precision == "f64":
        return repr(float(x))
    return repr(float(np.float32(x))) + "f"


def _format_array(name: str, values: np.ndarray, ctype: str, precision: str, per_line: int = 4) -> list[str]:
    dims = "".join(f"[{d}]" for d in values.shape)
    flat = [_literal(v, precision) for v in values.ravel()]
    lines = [f"static const {ctype} {name}{dims} = {{"]
    for i in range(0, len(flat), per_line):
        lines.append("    " + ", ".join(flat[i : i + per_line]) + ",")
    lines.append("};")
    return lines


def generate_inference_source(net: Mlp, precision: str = "f64", timestamp: str | None = None,
                              function_name: str = "policy_forward") -> GeneratedSource:
    """Emit a self-contained C99 translation unit evaluating ``net``.

    Only fixed-size arrays and ``tanh``/``tanhf`` are used. Compiling with
    ``-DPOLICY_COUNT_OPS`` makes every weight or bias application increment
    ``policy_op_count``. ``timestamp`` is recorded in the header comment
    only; the rest of the text depends on the weights alone.
    """
    if precision not in ("f32", "f64"):
        raise ValueError(f"precision must be 'f32' or 'f64', got {precision!r}")
    if net.out_dim != 4 or len(net.sizes) < 2:
        raise ValueError(f"expected an actor network with 4 outputs, got sizes {net.sizes}")
    if net.hidden != "tanh":
        raise ValueError("only tanh hidden layers are supported")
    ctype = "double" if precision == "f64" else "float"
    tanh = "tanh" if precision == "f64" else "tanhf"
    checksum = weights_checksum(net)
    sizes = tuple(net.sizes)
    fn = function_name

    lines = [
        "/*",
        f" * {fn}: generated actor inference routine",
        f" * format version: {FORMAT_VERSION}",
        f" * layer sizes: {'-'.join(map(str, sizes))}",
        f" * activations: {', '.join(['tanh'] * (len(sizes) - 2) + ['linear'])}",
        f" * precision: {precision}",
        f" * weights sha256: {checksum}",
        f" * exported: {timestamp or 'not recorded'}",
        " */",
        "#include <math.h>",
        "",
        f"#define POLICY_INPUT_DIM {sizes[0]}",
        f"#define POLICY_OUTPUT_DIM {sizes[-1]}",
        "",
        "#ifdef POLICY_COUNT_OPS",
        "unsigned long policy_op_count = 0;",
        "#define POLICY_TICK() (++policy_op_count)",
        "#else",
        "#define POLICY_TICK() ((void)0)",
        "#endif",
        "",
    ]
    for k, (W, b) in enumerate(split_layers(net.params, net.sizes)):
        lines += _format_array(f"W{k}", W, ctype, precision)
        lines += _format_array(f"B{k}", b, ctype, precision)
        lines.append("")

    lines.append(f"void {fn}(const {ctype} input[{sizes[0]}], {ctype} output[{sizes[-1]}])")
    lines.append("{")
    n_layers = len(sizes) - 1
    for k in range(n_layers - 1):
        lines.append(f"    {ctype} h{k}[{sizes[k + 1]}];")
    lines.append("    int i, j;")
    for k in range(n_layers):
        src = "input" if k == 0 else f"h{k - 1}"
        dst = "output" if k == n_layers - 1 else f"h{k}"
        n_in, n_out = sizes[k], sizes[k + 1]
        lines += [
            f"    for (i = 0; i < {n_out}; ++i) {{",
            f"        {ctype} acc = B{k}[i];",
            "        POLICY_TICK();",
            f"        for (j = 0; j < {n_in}; ++j) {{",
            f"            acc += W{k}[i][j] * {src}[j];",
            "            POLICY_TICK();",
            "        }",
            f"        {dst}[i] = {tanh + '(acc)' if k < n_layers - 1 else 'acc'};",
            "    }",
        ]
    lines.append("}")
    return GeneratedSource("\n".join(lines) + "\n", precision, sizes, checksum)


def compile_and_load(source: GeneratedSource, workdir=None, count_ops: bool = False, compiler: str | None = None):
    """Compile ``source`` into a shared library and return a batch evaluator.

    The evaluator maps an ``(n, in)`` float64 array to ``(n, 4)`` outputs,
    casting through the source's precision. Requires a C compiler on PATH.
    """
    cc = compiler or shutil.which("cc") or shutil.which("gcc")
    if cc is None:
        raise RuntimeError("no C compiler found")
    ctype = "double" if source.precision == "f64" else "float"
    n_in, n_out = source.sizes[0], source.sizes[-1]
    wrapper = source.text + f"""
void policy_forward_batch(const double *in, double *out, long n)
{{
    {ctype} x[{n_in}], y[{n_out}];
    long r; int i;
    for (r = 0; r < n; ++r) {{
        for (i = 0; i < {n_in}; ++i) x[i] = ({ctype})in[r * {n_in} + i];
        policy_forward(x, y);
        for (i = 0; i < {n_out}; ++i) out[r * {n_out} + i] = (double)y[i];
    }}
}}
"""
    tmp = Path(workdir or tempfile.mkdtemp(prefix="quadrl_export_"))
    tmp.mkdir(parents=True, exist_ok=True)
    c_path = tmp / "policy.c"
    so_path = tmp / f"policy_{source.checksum[:12]}_{source.precision}{'_ops' if count_ops else ''}.so"
    c_path.write_text(wrapper)
    cmd = [cc, "-O2", "-std=c99", "-shared", "-fPIC", "-ffp-contract=off", str(c_path), "-o", str(so_path), "-lm"]
    if count_ops:
        cmd.insert(1, "-DPOLICY_COUNT_OPS")
    subprocess.run(cmd, check=True, capture_output=True)
    lib = ctypes.CDLL(str(so_path))
    lib.policy_forward_batch.argtypes = [ctypes.c_void_p, ctypes.c_void_p, ctypes.c_long]
    lib.policy_forward_batch.restype = None

    def evaluate(x):
        x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if x.shape[1] != n_in:
            raise ValueError(f"expected inputs of width {n_in}")
        out = np.zeros((x.shape[0], n_out))
        lib.policy_forward_batch(x.ctypes.data, out.ctypes.data, x.shape[0])
        return out

    evaluate.lib = lib
    return evaluate
