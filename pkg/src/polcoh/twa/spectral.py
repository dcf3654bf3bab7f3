"""Batched 2-D FFT pairs for the spectral kinetic term.

FFTW (via pyfftw) is used when installed, with FFTW_ESTIMATE plans so results
do not depend on run-time measurements; otherwise scipy.fft. Set
``POLCOH_NO_FFTW`` to force scipy.
"""

import os

import numpy as np
import scipy.fft as sfft

try:
    if os.environ.get("POLCOH_NO_FFTW"):
        raise ImportError
    import pyfftw
except ImportError:  # optional accelerator
    pyfftw = None

FFT_NAME = "fftw" if pyfftw is not None else "scipy"


class KineticOperator:
    """Apply ``ifft2(kfac * fft2(psi))`` to a batch of fields.

    Input/output are (batch, n*n) complex arrays. The returned array is an
    internal buffer, overwritten by the next call.
    """

    def __init__(self, kfac, batch, fft=None):
        fft = fft or FFT_NAME
        self.shape = kfac.shape
        self.batch = batch
        self.m = kfac.size
        if fft == "fftw":
            if pyfftw is None:
                raise ImportError("pyfftw is not installed")
            full = (batch,) + self.shape
            self._a = pyfftw.empty_aligned(full, dtype=complex)
            self._b = pyfftw.empty_aligned(full, dtype=complex)
            kw = dict(axes=(1, 2), flags=("FFTW_ESTIMATE",), threads=1)
            self._fwd = pyfftw.FFTW(self._a, self._b, direction="FFTW_FORWARD", **kw)
            self._bwd = pyfftw.FFTW(self._b, self._a, direction="FFTW_BACKWARD", **kw)
            # FFTW's backward transform is unnormalised
            self._kfac = np.ascontiguousarray(kfac / self.m)
            self.apply = self._apply_fftw
        elif fft == "scipy":
            self._kfac = np.ascontiguousarray(kfac)
            self.apply = self._apply_scipy
        else:
            raise ValueError(f"unknown fft backend {fft!r}")

    def _apply_fftw(self, psi):
        self._a.reshape(self.batch, self.m)[...] = psi
        self._fwd.execute()
        self._b *= self._kfac
        self._bwd.execute()
        return self._a.reshape(self.batch, self.m)

    def _apply_scipy(self, psi):
        f = sfft.fft2(psi.reshape((self.batch,) + self.shape))
        f *= self._kfac
        return sfft.ifft2(f, overwrite_x=True).reshape(self.batch, self.m)
