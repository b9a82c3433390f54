"""Sectorized call/text volume analysis.

Modules: ``tessellation`` (sector geometry), ``geodesy`` (projection,
distances, rasters), ``volumes`` (tensors, resampling, anomalies),
``spectral`` (multitaper spectra), ``correlation`` (spatial correlation
matrices), ``events`` (earthquake and storm analyses), ``synthgen``
(synthetic data) and ``cli``.
"""

__version__ = "0.1.0"
