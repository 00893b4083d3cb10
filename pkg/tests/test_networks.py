import numpy as np
import pytest
import torch
import torch.nn.functional as F

from seqdenoise.networks import (AttentionGate, CheckpointError,
                                 MultiScaleExtractor, R2Unit, StudentConfig,
                                 StudentNet, TeacherConfig, TeacherNet,
                                 load_checkpoint, params_hash, save_checkpoint)


def test_multiscale_extract_shapes():
    torch.manual_seed(0)
    ex = MultiScaleExtractor("full")
    out = ex(torch.rand(1, 1, 64, 64))
    assert out.shape == (1, 96, 64, 64)


def test_multiscale_zero_weights_give_zero_output():
    ex = MultiScaleExtractor("full")
    with torch.no_grad():
        for p in ex.parameters():
            p.zero_()
        out = ex(torch.rand(1, 1, 16, 16))
    assert float(out.abs().max()) == 0.0


def test_four_frames_concatenate_to_384_channels():
    torch.manual_seed(0)
    net = TeacherNet(TeacherConfig())
    feats = net.extract(torch.rand(1, 4, 32, 32))
    assert feats.shape == (1, 384, 32, 32)
    assert net.in_channels == 384


def test_r2_unit_parameter_count_independent_of_t():
    torch.manual_seed(0)
    counts = {t: sum(p.numel() for p in R2Unit(8, t).parameters()) for t in (1, 2, 3)}
    assert counts[1] == counts[2] == counts[3]
    full = {t: sum(p.numel() for p in
                   TeacherNet(TeacherConfig(recurrence=t)).parameters())
            for t in (1, 3)}
    assert full[1] == full[3]


def test_r2_unit_zero_weights_is_identity():
    unit = R2Unit(4, t=3)
    with torch.no_grad():
        unit.conv.weight.zero_()
        unit.conv.bias.zero_()
    x = torch.rand(1, 4, 8, 8)
    assert torch.equal(unit(x), x)


def test_r2_unit_matches_manual_unrolling():
    torch.manual_seed(1)
    unit = R2Unit(3, t=2)
    x = torch.rand(1, 3, 4, 4)
    r = F.relu(unit.conv(x))
    r = F.relu(unit.conv(x + r))
    expected = x + r
    assert float((unit(x) - expected).abs().max()) == 0.0


def test_attention_gate_bounds_and_saturation():
    torch.manual_seed(2)
    gate = AttentionGate(8)
    skip = torch.rand(2, 8, 16, 16)
    gating = torch.rand(2, 8, 16, 16)
    a = gate.attention(skip, gating)
    assert float(a.min()) >= 0.0 and float(a.max()) <= 1.0
    out = gate(skip, gating)
    assert (out.abs() <= skip.abs() + 1e-7).all()

    with torch.no_grad():
        gate.psi.bias.fill_(50.0)      # saturate the sigmoid to 1
        gate.psi.weight.zero_()
    assert float((gate(skip, gating) - skip).abs().max()) < 1e-6
    with torch.no_grad():
        gate.psi.bias.fill_(-50.0)     # saturate to 0
    assert float(gate(skip, gating).abs().max()) < 1e-6


def test_teacher_forward_shape_and_determinism():
    torch.manual_seed(3)
    net = TeacherNet(TeacherConfig(levels=2, base_channels=4))
    net.eval()
    x = torch.rand(2, 4, 64, 64)
    with torch.no_grad():
        a = net(x)
        b = net(x)
    assert a.shape == (2, 1, 64, 64)
    assert torch.equal(a, b)


def test_teacher_rejects_wrong_context_count():
    net = TeacherNet(TeacherConfig(levels=2, base_channels=4))
    with torch.no_grad():
        with pytest.raises(ValueError):
            net(torch.rand(1, 3, 32, 32))


def test_indivisible_input_rejected():
    net = StudentNet(StudentConfig(levels=3, base_channels=4))
    with pytest.raises(ValueError):
        net(torch.rand(1, 1, 30, 30))


def test_student_forward_shape():
    torch.manual_seed(4)
    net = StudentNet(StudentConfig(levels=2, base_channels=4))
    out = net(torch.rand(3, 1, 64, 64))
    assert out.shape == (3, 1, 64, 64)


def test_ablation_frontend_variants():
    torch.manual_seed(5)
    for mode, per_frame in (("full", 96), ("3x3", 32), ("off", 1)):
        net = TeacherNet(TeacherConfig(multiscale=mode, levels=2, base_channels=4))
        assert net.in_channels == 4 * per_frame
        out = net(torch.rand(1, 4, 32, 32))
        assert out.shape == (1, 1, 32, 32)
    three = TeacherNet(TeacherConfig(num_context=2, levels=2, base_channels=4))
    assert three.in_channels == 192
    assert three(torch.rand(1, 2, 32, 32)).shape == (1, 1, 32, 32)


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(6)
    net = TeacherNet(TeacherConfig(levels=2, base_channels=4))
    path = tmp_path / "teacher.pt"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path, "teacher")
    assert params_hash(loaded) == params_hash(net)
    x = torch.rand(1, 4, 32, 32)
    with torch.no_grad():
        assert torch.equal(net.eval()(x), loaded(x))


def test_checkpoint_kind_mismatch(tmp_path):
    torch.manual_seed(7)
    net = StudentNet(StudentConfig(levels=2, base_channels=4))
    path = tmp_path / "student.pt"
    save_checkpoint(net, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, "teacher")


def test_checkpoint_hash_mismatch_refused(tmp_path):
    torch.manual_seed(8)
    net = StudentNet(StudentConfig(levels=2, base_channels=4))
    path = tmp_path / "student.pt"
    save_checkpoint(net, path)
    payload = torch.load(path, weights_only=False)
    payload["config"]["base_channels"] = 8    # silently altered architecture
    torch.save(payload, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
