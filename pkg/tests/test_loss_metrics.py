"""Error and loss functionals.

Closed forms for the identity strategy anchor both error paths; the
dense and Toeplitz pipelines cross-check each other on BLT strategies.
"""

import numpy as np
import pytest

from corrnoise.blt_core import BltParams, blt_coefs, lt_toeplitz, toeplitz_inverse_coefs
from corrnoise.loss_metrics import (
    MechanismLoss,
    blt_mechanism_loss,
    dense_error,
    mechanism_loss,
    prefix_sum_matrix,
    toeplitz_error,
)
from corrnoise.participation import ParticipationSchema

P2 = BltParams(np.array([0.9, 0.5]), np.array([0.2, 0.3]))


class TestErrorFunctionals:
    def test_identity_closed_forms(self):
        # C = I: prefix noise at round t has std sqrt(t+1), so
        # MaxError = sqrt(n) and RmsError = sqrt((n+1)/2)
        for n in (1, 2, 7, 64):
            chat = np.zeros(n)
            chat[0] = 1.0
            max_e, rms_e = toeplitz_error(chat)
            assert max_e == pytest.approx(np.sqrt(n), rel=1e-14)
            assert rms_e == pytest.approx(np.sqrt((n + 1) / 2), rel=1e-14)

    def test_max_error_is_last_row_for_nested_rows(self):
        # row norms of cumsum-structured B nest, so the max is the last row
        chat = toeplitz_inverse_coefs(blt_coefs(P2, 32))
        b = np.cumsum(chat)
        max_e, _ = toeplitz_error(chat)
        assert max_e == pytest.approx(np.sqrt(np.sum(b * b)), rel=1e-14)

    def test_dense_error_oracle(self, rng):
        B = rng.normal(size=(9, 9))
        max_e, rms_e = dense_error(B)
        row_norms = np.linalg.norm(B, axis=1)
        assert max_e == pytest.approx(row_norms.max(), rel=1e-14)
        assert rms_e == pytest.approx(np.sqrt(np.mean(row_norms**2)), rel=1e-14)

    def test_prefix_sum_matrix(self):
        A = prefix_sum_matrix(4)
        np.testing.assert_array_equal(A, np.tril(np.ones((4, 4))))


class TestMechanismLoss:
    def test_toeplitz_and_dense_paths_agree(self):
        schema = ParticipationSchema(96, 16, 3)
        c = blt_coefs(P2, 96)
        a = mechanism_loss(c, schema)
        b = mechanism_loss(lt_toeplitz(c), schema)
        assert a.sens == pytest.approx(b.sens, rel=1e-12)
        assert a.max_error == pytest.approx(b.max_error, rel=1e-10)
        assert a.rms_error == pytest.approx(b.rms_error, rel=1e-10)
        assert a.sens_method == "toeplitz"
        assert b.sens_method == "lower_bound"

    def test_blt_pairing_path_agrees_with_recurrence(self):
        schema = ParticipationSchema(256, 64, 4)
        fast = blt_mechanism_loss(P2, schema)
        slow = mechanism_loss(blt_coefs(P2, 256), schema)
        assert fast.max_loss == pytest.approx(slow.max_loss, rel=1e-10)
        assert fast.rms_loss == pytest.approx(slow.rms_loss, rel=1e-10)

    def test_identity_params_bundle(self):
        p = BltParams(np.array([0.5]), np.array([0.0]))
        schema = ParticipationSchema(16, 4, 4)
        bundle = blt_mechanism_loss(p, schema)
        assert bundle.sens == pytest.approx(2.0, rel=1e-14)  # sqrt(k)
        assert bundle.max_error == pytest.approx(4.0, rel=1e-14)  # sqrt(n)
        assert bundle.rms_error == pytest.approx(np.sqrt(8.5), rel=1e-14)

    def test_noise_multiplier_scales_losses_only(self):
        schema = ParticipationSchema(32, 8, 2)
        base = blt_mechanism_loss(P2, schema)
        scaled = blt_mechanism_loss(P2, schema, noise_multiplier=2.5)
        assert scaled.max_loss == pytest.approx(2.5 * base.max_loss, rel=1e-14)
        assert scaled.rms_loss == pytest.approx(2.5 * base.rms_loss, rel=1e-14)
        assert scaled.max_error == base.max_error
        assert scaled.sens == base.sens

    def test_loss_is_error_times_sens(self):
        bundle = blt_mechanism_loss(P2, ParticipationSchema(20, 5, 2))
        assert bundle.max_loss == pytest.approx(bundle.sens * bundle.max_error, rel=1e-14)
        assert bundle.rms_loss == pytest.approx(bundle.sens * bundle.rms_error, rel=1e-14)

    def test_dense_validation(self):
        schema = ParticipationSchema(4, 2, 2)
        with pytest.raises(ValueError):
            mechanism_loss(np.ones((4, 4)), schema)  # not lower-triangular
        with pytest.raises(ValueError):
            mechanism_loss(np.zeros((4, 4)), schema)  # zero diagonal
        with pytest.raises(ValueError):
            mechanism_loss(np.tril(np.ones((5, 5))), schema)  # wrong shape
        with pytest.raises(ValueError):
            mechanism_loss(np.ones((2, 2, 2)), schema)  # bad rank

    def test_bundle_is_frozen(self):
        bundle = blt_mechanism_loss(P2, ParticipationSchema(8, 2, 2))
        assert isinstance(bundle, MechanismLoss)
        with pytest.raises(AttributeError):
            bundle.sens = 0.0
