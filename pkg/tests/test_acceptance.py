"""End-to-end acceptance checks; the terminal summary prints one line per criterion."""

import time

import numpy as np
import pytest

from oracles import conv3d_loops, median_by_sort
from threedfr import cli, gradcheck, network, ops
from threedfr.datasets import WindowSet, synth_sequence, table2_manifest
from threedfr.errors import CheckpointCorruptError, CheckpointFormatError, CheckpointVersionError
from threedfr.metrics import Confusion, accumulate, evaluate_video, fscore, ground_truth_predictor
from threedfr.ops import ConvSpec
from threedfr.trainer import SGDConfig, load_checkpoint, lr_at_epoch, save_checkpoint, train

C1 = pytest.mark.criterion(1, "gradient correctness (finite differences < 1e-4)")
C2 = pytest.mark.criterion(2, "oracle equivalence of kernels and stream compositions")
C3 = pytest.mark.criterion(3, "architecture fidelity (depths, channel layout, widths)")
C4 = pytest.mark.criterion(4, "parameter count (closed form, within 8% of 126.45K)")
C5 = pytest.mark.criterion(5, "learning-rate schedule")
C6 = pytest.mark.criterion(6, "desk-scale scene-independent learning (F >= 0.90)")
C7 = pytest.mark.criterion(7, "determinism and checkpoint persistence")
C8 = pytest.mark.criterion(8, "split integrity")
C9 = pytest.mark.criterion(9, "metric correctness")


# -- 1 --------------------------------------------------------------------


@C1
def test_gradients_all_primitives_and_network():
    start = time.perf_counter()
    results = gradcheck.run_all(seed=0, instances=20)
    elapsed = time.perf_counter() - start
    names = {r.name for r in results}
    assert names == set(gradcheck.PRIMITIVES) | {"network_8x8"}
    for r in results:
        print(f"{r.name}: max relative error {r.max_error:.2e} over {r.instances} instances")
        assert r.max_error < 1e-4, r.name
        assert r.name == "network_8x8" or r.instances >= 20
    assert elapsed < 300


# -- 2 --------------------------------------------------------------------


@C2
def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(2)
    cases = [((2, 3, 6, 5, 7), (4, 3, 2, 3, 3), (2, 1, 2), (0, 1, 1)),
             ((1, 3, 50, 8, 8), (8, 3, 5, 5, 5), (5, 1, 1), (0, 2, 2)),
             ((1, 2, 4, 6, 6), (3, 2, 1, 1, 1), (1, 2, 1), (1, 0, 0))]
    for xs, ws, stride, pad in cases:
        x, w, b = rng.normal(size=xs), rng.normal(size=ws), rng.normal(size=ws[0])
        spec = ConvSpec(stride, pad)
        np.testing.assert_allclose(ops.conv3d_forward(x, w, b, spec), conv3d_loops(x, w, b, stride, pad),
                                   rtol=0, atol=1e-12)


@C2
def test_median_matches_sort_oracle():
    h = np.random.default_rng(3).random((1, 3, 50, 8, 8))
    np.testing.assert_array_equal(network.temporal_median(h), median_by_sort(h))


@C2
def test_tconv_is_conv_input_gradient():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 5, 1, 6, 7))
    w = rng.normal(size=(4, 5, 1, 3, 3))
    spec = ConvSpec.same((1, 3, 3))
    # transposed conv with weights (4, 5) is the input-gradient of the conv with weights (5, 4)
    expected = ops.conv3d_backward(np.zeros((1, 4, 1, 6, 7)), w.transpose(1, 0, 2, 3, 4), spec, x)[0]
    np.testing.assert_array_equal(ops.tconv3d_forward(x, w, np.zeros(4), spec), expected)


@C2
def test_streams_match_primitive_compositions():
    p = network.init_params(5)
    rng = np.random.default_rng(5)
    h, c = rng.random((1, 3, 50, 16, 16)), rng.random((1, 3, 1, 16, 16))

    def branches(prefix, x):
        return ops.branch_average([ops.conv3d_forward(x, p[f"{prefix}.k{k}"].weights, p[f"{prefix}.k{k}"].bias,
                                                      p[f"{prefix}.k{k}"].spec) for k in (1, 3, 5)])

    av = h
    for s in (1, 2, 3):
        av = branches(f"avfeat.s{s}", av)
    np.testing.assert_array_equal(network.avfeat_forward(h, p)[0], av)
    np.testing.assert_array_equal(network.confeat_forward(c, p)[0], branches("confeat", c))
    z = np.concatenate([av, branches("confeat", c), median_by_sort(h)], axis=1)
    enc = z
    for s in (1, 2, 3):
        a, b = p[f"enc{s}.conv1"], p[f"enc{s}.conv2"]
        enc = ops.relu(ops.maxpool_122(ops.conv3d_forward(ops.conv3d_forward(enc, a.weights, a.bias, a.spec),
                                                          b.weights, b.bias, b.spec))[0])
    np.testing.assert_array_equal(network.encoder_forward(z, p)[0], enc)
    dec = enc
    for s in (1, 2, 3):
        a, b = p[f"dec{s}.tconv1"], p[f"dec{s}.tconv2"]
        dec = ops.relu(ops.tconv3d_forward(ops.tconv3d_forward(ops.upsample_122(dec), a.weights, a.bias, a.spec),
                                           b.weights, b.bias, b.spec))
    hd = p["head"]
    prob = ops.sigmoid(ops.tconv3d_forward(dec, hd.weights, hd.bias, hd.spec))
    np.testing.assert_array_equal(network.decoder_head_forward(enc, p)[0], prob)
    np.testing.assert_array_equal(network.forward(h, c, p)[0], prob)


# -- 3 --------------------------------------------------------------------


@C3
@pytest.mark.parametrize("size", [8, 64, 128])
def test_architecture_shapes(size):
    p = network.init_params(0)
    h, c = np.zeros((1, 3, 50, size, size)), np.zeros((1, 3, 1, size, size))
    av, av_cache = network.avfeat_forward(h, p)
    depths = [av_cache[f"avfeat.s{s}"].shape[2] for s in (1, 2, 3)] + [av.shape[2]]
    assert depths == [50, 10, 2, 1]
    prob, cache = network.forward(h, c, p)
    assert cache["split"] == (8, 8, 3)
    enc_channels = []
    for s in (1, 2, 3):
        z, a, pooled, _ = cache["encoder"][f"enc{s}"]
        enc_channels += [a.shape[1], pooled.shape[1]]
        assert pooled.shape[3:] == (size >> s, size >> s)
    assert enc_channels == [8, 16, 16, 32, 32, 64]
    dec_channels = []
    for s in (1, 2, 3):
        u, a, b = cache["decoder"][f"dec{s}"]
        dec_channels += [a.shape[1], b.shape[1]]
        assert b.shape[3:] == (size >> (3 - s), size >> (3 - s))
    assert dec_channels + [prob.shape[1]] == [64, 32, 32, 16, 16, 8, 1]
    assert prob.shape == (1, 1, 1, size, size)


# -- 4 --------------------------------------------------------------------


@C4
def test_parameter_count(capsys):
    from test_network import closed_form_count

    total = network.param_count(network.init_params(0))
    assert total == closed_form_count() == 130817
    gap = abs(total - 126_450) / 126_450
    assert gap < 0.08
    assert cli.main(["params"]) == 0
    out = capsys.readouterr().out
    assert "130817" in out and "126.45K" in out and "configuration:" in out
    print(f"param_count {total}; gap {gap:.2%}")


# -- 5 --------------------------------------------------------------------


@C5
def test_schedule():
    cfg = SGDConfig()
    assert [lr_at_epoch(cfg, e) for e in (0, 20, 40)] == [0.0006, 0.0004, 0.0002]
    assert all(lr_at_epoch(cfg, e) == 0.0001 for e in range(60, 500))


# -- 6 --------------------------------------------------------------------

TRAIN_SEED, TEST_SEED, EPOCHS = 0, 1, 60


def moving_average(values, k=10):
    return [float(np.mean(values[i : i + k])) for i in range(len(values) - k + 1)]


@C6
@pytest.mark.slow
def test_desk_scale_learning():
    train_seq = synth_sequence(width=64, height=64, frame_count=300, object_count=2, noise_sigma=0.02, seed=TRAIN_SEED)
    test_seq = synth_sequence(width=64, height=64, frame_count=300, object_count=2, noise_sigma=0.02, seed=TEST_SEED)
    start = time.perf_counter()
    params, run = train(WindowSet([train_seq]), SGDConfig(), epochs=EPOCHS, seed=TRAIN_SEED)
    _, f = evaluate_video(test_seq, params, threshold=0.5)
    elapsed = time.perf_counter() - start
    losses = run.loss_history
    ma = moving_average(losses)
    print(f"test F {f:.4f}; epoch-1 loss {losses[0]:.4f}; epoch-60 loss {losses[-1]:.4f}; {elapsed / 60:.1f} min")
    assert len(losses) == EPOCHS
    assert losses[49] < losses[0]
    assert all(b <= a for a, b in zip(ma, ma[1:])), ma
    assert f is not None and f >= 0.90
    assert elapsed < 2 * 3600


# -- 7 --------------------------------------------------------------------


@C7
def test_determinism_and_persistence(tmp_path):
    seq = synth_sequence(width=16, height=16, frame_count=58, object_count=1, object_size=5, seed=3)
    windows = WindowSet([seq], step=2)
    runs = [train(windows, epochs=2, seed=21) for _ in range(2)]
    assert runs[0][1].loss_history == runs[1][1].loss_history
    paths = [tmp_path / "a.ckpt", tmp_path / "b.ckpt"]
    for (params, _), path in zip(runs, paths):
        save_checkpoint(params, path)
    data = paths[0].read_bytes()
    assert data == paths[1].read_bytes()
    loaded = load_checkpoint(paths[0])
    for a, b in zip(runs[0][0], loaded):
        assert a.weights.tobytes() == b.weights.tobytes() and a.bias.tobytes() == b.bias.tobytes()
    for blob, err in ((b"JUNK" + data[4:], CheckpointFormatError),
                      (data[:4] + b"\x07\x00\x00\x00" + data[8:], CheckpointVersionError),
                      (data[:-13], CheckpointCorruptError)):
        paths[1].write_bytes(blob)
        with pytest.raises(err):
            load_checkpoint(paths[1])


# -- 8 --------------------------------------------------------------------

EXPECTED_SPLIT = {
    "badWeather": ({"skating", "snowFall", "wetSnow"}, "blizzard"),
    "baseline": ({"highway", "office", "PETS2006"}, "pedestrians"),
    "cameraJitter": ({"badminton", "boulevard", "sidewalk"}, "traffic"),
    "dynamicBackground": ({"canoe", "fall", "fountain01", "fountain02", "overpass"}, "boats"),
    "intermittentObjectMotion": ({"abandonedBox", "sofa", "streetLight", "tramstop", "winterDriveway"}, "parking"),
    "lowFramerate": ({"port_0_17fps", "tramCrossroad_1fps", "tunnelExit_0_35fps"}, "turnpike_0_5fps"),
    "nightVideos": ({"bridgeEntry", "busyBoulevard", "fluidHighway", "streetCornerAtNight", "winterStreet"},
                    "tramStation"),
    "shadow": ({"backdoor", "bungalows", "cubicle", "peopleInShade"}, "busStation"),
    "thermal": ({"diningRoom", "lakeSide", "library", "park"}, "corridor"),
    "turbulence": ({"turbulence0", "turbulence2", "turbulence3"}, "turbulence1"),
}


@C8
def test_split_integrity():
    m = table2_manifest().validate()
    assert len(m.categories) == 10 and "PTZ" not in m.categories
    assert "copyMachine" not in {r.video for r in m}
    for cat, (train_videos, test_video) in EXPECTED_SPLIT.items():
        assert {r.video for r in m.rows("train", cat)} == train_videos
        assert m.test_video(cat) == test_video


# -- 9 --------------------------------------------------------------------


@C9
def test_metrics():
    assert fscore(Confusion(1, 1, 1, 1)) == 0.5
    assert fscore(Confusion(8, 2, 0, 90)) == 16 / 18
    assert fscore(Confusion(0, 5, 5, 0)) == 0.0
    assert fscore(Confusion(0, 0, 0, 7)) is None
    seq = synth_sequence(width=32, height=32, frame_count=60, object_count=2, object_size=8, seed=6)
    assert evaluate_video(seq, ground_truth_predictor)[1] == 1.0
    rng = np.random.default_rng(9)
    prob, target, mask = rng.random(500), rng.random(500) < 0.4, np.ones(500)
    sweep = [accumulate(Confusion(), prob, target, mask, t) for t in np.linspace(0, 1, 41)]
    assert all(a.tp >= b.tp and a.tp + a.fp >= b.tp + b.fp for a, b in zip(sweep, sweep[1:]))
