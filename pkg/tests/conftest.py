import numpy as np
import pytest

X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)
I2 = np.eye(2, dtype=complex)


def kron_all(*ms):
    out = np.eye(1, dtype=complex)
    for m in ms:
        out = np.kron(out, m)
    return out


def random_hermitian(dim, rng, scale=1.0):
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (g + g.conj().T) / 2


def random_unitary(dim, rng):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    return q * (np.diag(r) / abs(np.diag(r)))


def svd_norm(m):
    return float(np.linalg.svd(np.asarray(m), compute_uv=False)[0])


def partial_trace_restrict(m, n_sites, lo, hi):
    """Normalized trace over sites outside [lo, hi], tensored back with the identity."""
    t = np.asarray(m).reshape([2] * (2 * n_sites))
    outside = [s for s in range(n_sites) if not lo <= s <= hi]
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n_sites])
    cols = list(letters[n_sites:2 * n_sites])
    for s in outside:
        cols[s] = rows[s]
    keep = [s for s in range(n_sites) if lo <= s <= hi]
    out = "".join(rows[s] for s in keep) + "".join(cols[s] for s in keep)
    reduced = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    k = hi - lo + 1
    reduced = reduced.reshape(2**k, 2**k) / 2 ** len(outside)
    return kron_all(np.eye(2**lo), reduced, np.eye(2 ** (n_sites - 1 - hi)))


@pytest.fixture
def rng():
    return np.random.default_rng(20241018)


_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    _CRITERIA[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
