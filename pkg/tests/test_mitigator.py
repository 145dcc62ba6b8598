import numpy as np
import pytest

from xmas_mitigator.classifier import PredictionRecord, load_gallery
from xmas_mitigator.exceptions import ClassifierError, ClassifierTimeoutError, SoothingError
from xmas_mitigator.image_core import ImageBuffer, Kernel, linf_distance, mean_abs_distance
from xmas_mitigator.mitigator import (
    TRACE_DETAIL_HEADER,
    TRACE_HEADER,
    MitigationState,
    StopReason,
    accuracy_curve,
    mitigation_step,
    read_trace_csv,
    run_mitigation,
    single_level_mitigate,
    write_trace_csv,
)
from xmas_mitigator.moving_average import convolve_mean
from xmas_mitigator.soothing import JpegSoother, MeanSoother


class ScriptedClassifier:
    """Returns labels from a fixed script, repeating the last one."""

    name = 'scripted'

    def __init__(self, labels):
        self.labels = list(labels)
        self.calls = 0

    def predict(self, img):
        label = self.labels[min(self.calls, len(self.labels) - 1)]
        self.calls += 1
        return PredictionRecord(label, 0.5)

    def close(self):
        pass


class CyclingClassifier(ScriptedClassifier):
    def predict(self, img):
        label = self.labels[self.calls % len(self.labels)]
        self.calls += 1
        return PredictionRecord(label, 0.5)


class FailingClassifier(ScriptedClassifier):
    def __init__(self, fail_at, error):
        super().__init__(['ok'])
        self.fail_at = fail_at
        self.error = error

    def predict(self, img):
        if self.calls == self.fail_at:
            raise self.error
        return super().predict(img)


def two_steps(img, kernel, **kwargs):
    state = MitigationState.initial(img, kernel)
    state = mitigation_step(state, kernel)
    return state, mitigation_step(state, kernel, **kwargs)


class TestMitigationStep:
    def test_step_zero_only_estimates(self, spike_image):
        state = MitigationState.initial(spike_image, Kernel.ones(3))
        after = mitigation_step(state, Kernel.ones(3))
        assert after.current == spike_image
        assert after.prev_magnitudes == (8.0, 1.0)
        assert after.step == 1

    def test_boundary_is_the_local_mean_of_the_input(self, spike_image):
        state = MitigationState.initial(spike_image, Kernel.ones(3))
        assert state.boundary.samples[2, 2, 0] == 101.0
        assert state.boundary.samples[0, 0, 0] == 100.0

    def test_spike_is_held_at_the_boundary(self, spike_image):
        _, after = two_steps(spike_image, Kernel.ones(3))
        # 109 - 8 = 101 is not strictly above 101; 100 + 1 = 101 is not strictly below it
        assert after.current == spike_image
        assert after.last_outcome.updated == 0
        assert after.held_samples_last_step == 9

    def test_forced_smaller_magnitude_is_applied(self, spike_image):
        _, after = two_steps(spike_image, Kernel.ones(3), forced_magnitudes=(7.5, 0.5))
        assert after.current.samples[2, 2, 0] == 101.5
        assert after.current.samples[1, 1, 0] == 100.5
        assert after.current.samples[0, 0, 0] == 100.0
        assert after.last_outcome.updated == 9
        assert after.last_outcome.applied_subtract
        assert after.last_outcome.applied_add

    def test_constant_image_is_a_fixed_point(self):
        img = ImageBuffer.constant(6, 6, 50, channels=3)
        state = MitigationState.initial(img, Kernel.ones(3))
        for _ in range(4):
            state = mitigation_step(state, Kernel.ones(3))
            assert state.current == img

    def test_refresh_boundary_recomputes_from_current(self, adversarial):
        _, adv = adversarial(100, 16, seed=3)
        kernel = Kernel.ones(3)
        state = MitigationState.initial(adv, kernel)
        for _ in range(3):
            state = mitigation_step(state, kernel, refresh_boundary=True)
        assert state.boundary != MitigationState.initial(adv, kernel).boundary

    def test_round_result_keeps_integer_samples(self, adversarial):
        _, adv = adversarial(100, 16, seed=4)
        kernel = Kernel.ones(3)
        state = MitigationState.initial(adv, kernel, round_boundary=True)
        for _ in range(3):
            state = mitigation_step(state, kernel, round_result=True)
        assert np.array_equal(state.current.samples, np.rint(state.current.samples))


SUITE = [
    (base, epsilon, mode, seed)
    for base in ('constant', 'ramp')
    for epsilon in (0, 8, 16, 32, 64)
    for mode in ('fast', 'iterative')
    for seed in range(3)
]


def interior(img):
    return img.samples[1:-1, 1:-1]


@pytest.fixture
def attacked(adversarial, ramp_image):
    def make(base, epsilon, seed, mode='fast', size=32):
        clean = ramp_image(size) if base == 'ramp' else ImageBuffer.constant(size, size, 100)
        return adversarial(clean, epsilon, seed=seed, mode=mode)
    return make


class TestBoundarySafety:
    """Long alternating-label runs over a mixed suite of bases, budgets and attack modes."""

    @pytest.mark.parametrize('base,epsilon,mode,seed', SUITE)
    def test_samples_never_cross_the_boundary(self, attacked, base, epsilon, mode, seed):
        _, adv = attacked(base, epsilon, seed, mode=mode, size=64)
        kernel = Kernel.ones(3)
        boundary = MitigationState.initial(adv, kernel).boundary.samples
        start_side = np.sign(adv.samples - boundary)

        def check(state):
            side = np.sign(state.current.samples - boundary)
            # samples keep their side; samples on the boundary never move
            assert np.array_equal(side, start_side)

        result = run_mitigation(adv, kernel, k=5, max_steps=100, classifier=CyclingClassifier(['a', 'b']),
                                stop_on_stall=False, on_step=check)
        assert result.steps_run == 100

    @pytest.mark.parametrize('base,epsilon,mode,seed', SUITE)
    def test_guard_magnitudes_never_increase_for_applied_steps(self, attacked, base, epsilon, mode, seed):
        _, adv = attacked(base, epsilon, seed, mode=mode, size=64)
        applied = {0: [], 1: []}

        def record(state):
            outcome = state.last_outcome
            if outcome.applied_subtract:
                applied[0].append(outcome.mag_subtract)
            if outcome.applied_add:
                applied[1].append(outcome.mag_add)

        run_mitigation(adv, Kernel.ones(3), k=5, max_steps=100, classifier=CyclingClassifier(['a', 'b']),
                       stop_on_stall=False, on_step=record)
        for mags in applied.values():
            assert all(later <= earlier for earlier, later in zip(mags, mags[1:]))
        if epsilon:
            assert applied[0] and applied[1]


class TestPerturbationBudget:
    """Every sample ends between its start and its boundary, so a clean image that
    equals its own moving average is never left more than ε away."""

    @pytest.mark.parametrize('base', ['constant', 'ramp'])
    @pytest.mark.parametrize('mode', ['fast', 'iterative'])
    @pytest.mark.parametrize('epsilon', [8, 16, 32, 64])
    def test_final_stays_within_budget_inside(self, attacked, base, mode, epsilon):
        for seed in range(3):
            clean, adv = attacked(base, epsilon, seed, mode=mode)
            result = run_mitigation(adv, Kernel.ones(3), k=5, max_steps=100,
                                    classifier=CyclingClassifier(['a', 'b']), stop_on_stall=False)
            assert np.all(np.abs(interior(result.final_image) - interior(clean)) <= epsilon + 1e-9)

    def test_final_lies_between_start_and_boundary(self, attacked):
        _, adv = attacked('ramp', 32, seed=4)
        kernel = Kernel.ones(3)
        boundary = MitigationState.initial(adv, kernel).boundary.samples
        final = run_mitigation(adv, kernel, k=5, max_steps=100, classifier=CyclingClassifier(['a', 'b']),
                               stop_on_stall=False).final_image.samples
        low = np.minimum(adv.samples, boundary)
        high = np.maximum(adv.samples, boundary)
        assert np.all((final >= low) & (final <= high))

    def test_polarity_can_flip_when_the_boundary_lies_across_the_clean_value(self, attacked):
        # the boundary is the local mean of the attacked image, not the clean one
        flipped = 0
        for seed in range(5):
            clean, adv = attacked('constant', 32, seed)
            final = run_mitigation(adv, Kernel.ones(3), k=5, max_steps=100,
                                   classifier=CyclingClassifier(['a', 'b']), stop_on_stall=False).final_image
            before = np.sign(adv.samples - clean.samples)
            after = np.sign(final.samples - clean.samples)
            flipped += np.count_nonzero(before * after < 0)
        assert flipped > 0


class TestRunMitigation:
    def test_benign_constant_image_converges(self, toy):
        img = ImageBuffer.constant(32, 32, 100)
        result = run_mitigation(img, Kernel.ones(3), k=3, classifier=toy, soother=JpegSoother(20))
        assert result.steps_run == 2
        assert result.stop_reason is StopReason.CONVERGED_PREDICTIONS
        assert result.final_image == img
        assert result.final_prediction.label == 'mid'

    def test_benign_constant_image_stalls_with_longer_ring(self, toy):
        img = ImageBuffer.constant(32, 32, 100)
        result = run_mitigation(img, Kernel.ones(3), k=5, classifier=toy)
        assert result.steps_run == 2
        assert result.stop_reason is StopReason.MAGNITUDE_STALL
        assert result.final_image == img

    def test_max_steps_cap(self, toy):
        result = run_mitigation(ImageBuffer.constant(8, 8, 100), Kernel.ones(3), max_steps=1, classifier=toy)
        assert result.steps_run == 1
        assert result.stop_reason is StopReason.MAX_STEPS

    def test_converges_after_k_minus_one_equal_labels(self):
        clf = ScriptedClassifier(['a', 'b', 'c', 'c', 'c', 'c'])
        result = run_mitigation(ImageBuffer.constant(8, 8, 9), Kernel.ones(3), k=4, classifier=clf,
                                stop_on_stall=False)
        assert result.stop_reason is StopReason.CONVERGED_PREDICTIONS
        assert result.steps_run == 5
        assert [r.label for r in result.trace] == ['a', 'b', 'c', 'c', 'c']

    def test_alternating_labels_run_to_the_cap(self):
        clf = CyclingClassifier(['x', 'y'])
        result = run_mitigation(ImageBuffer.constant(8, 8, 9), Kernel.ones(3), k=3, max_steps=7,
                                classifier=clf, stop_on_stall=False)
        assert result.stop_reason is StopReason.MAX_STEPS
        assert result.steps_run == 7

    def test_stall_stops_an_unchanging_run(self):
        clf = CyclingClassifier(['x', 'y'])
        result = run_mitigation(ImageBuffer.constant(8, 8, 9), Kernel.ones(3), k=3, max_steps=50,
                                classifier=clf)
        assert result.stop_reason is StopReason.MAGNITUDE_STALL
        assert result.steps_run == 2

    def test_argument_validation(self, toy):
        img = ImageBuffer.constant(4, 4, 1)
        with pytest.raises(ValueError):
            run_mitigation(img, Kernel.ones(3), k=1, classifier=toy)
        with pytest.raises(ValueError):
            run_mitigation(img, Kernel.ones(3), max_steps=0, classifier=toy)
        with pytest.raises(ValueError):
            run_mitigation(img, Kernel.ones(3))

    def test_classifier_error_carries_the_step(self):
        clf = FailingClassifier(2, ClassifierTimeoutError('no answer'))
        with pytest.raises(ClassifierTimeoutError) as info:
            run_mitigation(ImageBuffer.constant(8, 8, 9), Kernel.ones(3), k=5, classifier=clf,
                           stop_on_stall=False)
        assert info.value.step == 2
        assert 'step 2' in str(info.value)

    def test_unexpected_classifier_failure_is_wrapped(self):
        clf = FailingClassifier(0, KeyError('boom'))
        with pytest.raises(ClassifierError) as info:
            run_mitigation(ImageBuffer.constant(8, 8, 9), Kernel.ones(3), classifier=clf)
        assert info.value.step == 0

    def test_soother_error_carries_the_step(self):
        calls = []

        def soother(img):
            calls.append(img)
            if len(calls) == 2:
                raise SoothingError('encoder gave up')
            return img

        with pytest.raises(SoothingError) as info:
            run_mitigation(ImageBuffer.constant(8, 8, 9), Kernel.ones(3), k=5, soother=soother,
                           classifier=CyclingClassifier(['a', 'b']), stop_on_stall=False)
        assert info.value.step == 1
        assert 'step 1' in str(info.value)

    def test_unexpected_soother_failure_is_wrapped(self):
        def soother(img):
            raise ValueError('unsupported mode')

        with pytest.raises(SoothingError) as info:
            run_mitigation(ImageBuffer.constant(8, 8, 9), Kernel.ones(3), soother=soother,
                           classifier=ScriptedClassifier(['a']))
        assert info.value.step == 0

    def test_soothing_does_not_feed_back_into_the_state(self, adversarial):
        _, adv = adversarial(100, 16, seed=9)
        plain = run_mitigation(adv, Kernel.ones(3), k=3, max_steps=6,
                               classifier=CyclingClassifier(['a', 'b']), stop_on_stall=False)
        soothed = run_mitigation(adv, Kernel.ones(3), k=3, max_steps=6, soother=MeanSoother(Kernel.ones(5)),
                                 classifier=CyclingClassifier(['a', 'b']), stop_on_stall=False)
        assert plain.final_image == soothed.final_image
        assert [r.held for r in plain.trace] == [r.held for r in soothed.trace]


class TestMitigationQuality:
    @pytest.mark.parametrize('base', ['constant', 'ramp'])
    @pytest.mark.parametrize('epsilon', [16, 32])
    def test_linf_error_never_grows(self, toy, attacked, base, epsilon):
        for seed in range(20):
            clean, adv = attacked(base, epsilon, seed)
            result = run_mitigation(adv, Kernel.ones(3), k=5, max_steps=100, classifier=toy)
            worst = float(np.max(np.abs(interior(result.final_image) - interior(clean))))
            assert worst <= linf_distance(adv, clean)

    @pytest.mark.parametrize('base', ['constant', 'ramp'])
    @pytest.mark.parametrize('epsilon', [16, 32])
    def test_mean_error_shrinks(self, toy, attacked, base, epsilon):
        improved = 0
        runs = 20
        for seed in range(runs):
            clean, adv = attacked(base, epsilon, seed)
            result = run_mitigation(adv, Kernel.ones(3), k=5, max_steps=100, classifier=toy)
            before = np.mean(np.abs(interior(adv) - interior(clean)))
            after = np.mean(np.abs(interior(result.final_image) - interior(clean)))
            if after < before:
                improved += 1
        assert improved >= 0.9 * runs

    def test_single_level_reduces_mean_error(self, adversarial):
        clean, adv = adversarial(100, 32, seed=11)
        out = single_level_mitigate(adv, Kernel.ones(3))
        assert mean_abs_distance(out, clean) < mean_abs_distance(adv, clean)


class TestBenignStability:
    def test_gallery_labels_survive_mitigation(self, toy, gallery_dir):
        kernel = Kernel.ones(3)
        checked = 0
        for _, img in load_gallery(gallery_dir):
            label = toy.predict(img).label
            if toy.predict(convolve_mean(img, kernel)).label != label:
                continue
            checked += 1
            result = run_mitigation(img, kernel, k=5, max_steps=100, classifier=toy, stop_on_stall=False)
            assert {record.label for record in result.trace} == {label}
        assert checked >= 2

    def test_intermediate_images_keep_the_label_of_the_smoothed_image(self, toy, gallery_dir):
        # every sample ends between X and its local mean, so the label holds along the way
        kernel = Kernel.ones(3)
        for _, img in load_gallery(gallery_dir):
            label = toy.predict(img).label
            if toy.predict(convolve_mean(img, kernel)).label != label:
                continue
            labels = []

            def record(state):
                labels.append(toy.predict(state.current).label)

            run_mitigation(img, kernel, k=5, max_steps=20, classifier=CyclingClassifier(['a', 'b']),
                           stop_on_stall=False, on_step=record)
            assert set(labels) == {label}


class TestTrace:
    def _result(self, length):
        clf = CyclingClassifier(['x', 'y'])
        return run_mitigation(ImageBuffer.constant(8, 8, 9), Kernel.ones(3), k=3, max_steps=length,
                              classifier=clf, stop_on_stall=False)

    def test_one_row_per_step(self):
        rows = accuracy_curve(self._result(5))
        assert len(rows) == 5
        assert [row[0] for row in rows] == [0, 1, 2, 3, 4]
        assert all(len(row) == len(TRACE_HEADER) for row in rows)

    def test_csv_roundtrip(self, tmp_path):
        result = self._result(5)
        path = tmp_path / 'trace.csv'
        write_trace_csv(result, path)
        assert path.read_text().splitlines()[0] == ','.join(TRACE_HEADER)
        assert read_trace_csv(path) == accuracy_curve(result)

    def test_detail_columns(self, tmp_path):
        result = self._result(3)
        path = tmp_path / 'trace.csv'
        write_trace_csv(result, path, detail=True)
        assert path.read_text().splitlines()[0] == ','.join(TRACE_DETAIL_HEADER)
        assert read_trace_csv(path) == accuracy_curve(result, detail=True)

    def test_held_count_saturates_at_the_same_step_for_any_soother(self, adversarial):
        _, adv = adversarial(100, 32, seed=5)
        runs = []
        for soother in (None, JpegSoother(20), MeanSoother(Kernel.ones(3))):
            result = run_mitigation(adv, Kernel.ones(3), k=5, max_steps=60, soother=soother,
                                    classifier=CyclingClassifier(['a', 'b']))
            runs.append([(r.held, r.updated) for r in result.trace])
        assert runs[0] == runs[1] == runs[2]
