from .periodogram import (SampleSeries, Spectrum, alias_offset, averaged_periodogram, periodogram,
                          periodogram_of, zoom_periodogram, zoom_periodogram_of)
from .fitting import (NoPeakError, PeakFit, detection_threshold, fit_lorentzian, fit_peak,
                      half_power_width, lorentzian, snr)
from .precision import (PrecisionModel, crb_tone_frequency, predict_precision_dd,
                        predict_precision_memory, predict_precision_qdyne)
from .scaling import (ScalingResult, TrialResult, locate_line, loglog_slope, qdyne_trial,
                      scaling_harness, sweep_fit, sweep_trial)
