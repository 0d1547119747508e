import numpy as np
import pytest

from maskbench.embedding import blockmean_embedder
from maskbench.errors import DataError, ValidationError
from maskbench.imaging import make_hybrid
from maskbench.protocols import (
    EmbeddingSource,
    FaceLoader,
    checkpoint,
    frame_index,
    run_identification,
    run_verification,
    stable_seed,
    verification_pairs,
)
from maskbench.raster import Raster, load_manifest, read_image
from maskbench.splits import split_kfold
from maskbench.synthetic import synthetic_subjects


def test_stable_seed():
    assert stable_seed(0, "a") == stable_seed(0, "a")
    assert stable_seed(0, "a") != stable_seed(1, "a")
    assert stable_seed(0, "a") != stable_seed(0, "b")


def test_synthetic_corpus_deterministic():
    a = synthetic_subjects(2, 2, seed=5)
    b = synthetic_subjects(2, 2, seed=5)
    assert [s.visual for s in a] == [s.visual for s in b]
    assert a[0].visual[0].channels == 3 and a[0].thermal[0].channels == 1
    assert synthetic_subjects(2, 2, seed=6)[0].visual[0] != a[0].visual[0]


def test_corpus_manifest(corpus):
    m = load_manifest(corpus / "manifest.csv")
    assert len(m) == 8 * 3 * 4
    assert len(m.subjects) == 8
    assert set(m.counts().values()) == {24}
    frames = frame_index(m)
    assert len(frames) == 24
    assert all(len(f) == 4 for f in frames.values())
    masked = read_image(m.resolve(m.select("visual", "masked")[0])).to_array()
    assert not masked[144:].any()


def test_verification_pairs_balanced(corpus):
    m = load_manifest(corpus / "manifest.csv")
    entries = m.select(spectrum="visual")
    for cond in "abc":
        pairs = verification_pairs(entries, cond, seed=0, max_pairs=40)
        same = [p for p in pairs if p[2]]
        assert len(same) * 2 == len(pairs) <= 40
        assert all((a.subject_id == b.subject_id) == s for a, b, s in pairs)
    assert verification_pairs(entries, "a", 0) == verification_pairs(entries, "a", 0)
    with pytest.raises(ValidationError):
        verification_pairs(entries, "d", 0)


def test_run_verification(corpus):
    m = load_manifest(corpus / "manifest.csv")
    plans = split_kfold(m, 2, seed=0)
    embed = EmbeddingSource(FaceLoader(m), blockmean_embedder(8, "periocular"))
    run = run_verification(m, plans, embed, seed=0)
    assert run.matrix.rows == ["a", "b", "c"]
    assert len(run.fold_results) == 2 * 9
    assert run.matrix[("c", "c")].mean >= 0.9
    assert set(run.thresholds) == {(f, c) for f in range(2) for c in "abc"}
    again = run_verification(m, plans, EmbeddingSource(FaceLoader(m), blockmean_embedder(8, "periocular")), seed=0)
    assert again.fold_results == run.fold_results


def test_run_verification_missing_condition(corpus):
    m = load_manifest(corpus / "manifest.csv")
    from maskbench.raster import Manifest

    unmasked_only = Manifest(tuple(m.select(mask_state="unmasked")), root=m.root)
    embed = EmbeddingSource(FaceLoader(unmasked_only), blockmean_embedder())
    with pytest.raises(DataError, match="needs"):
        run_verification(unmasked_only, split_kfold(unmasked_only, 2, 0), embed)
    with pytest.raises(DataError, match="thermal"):
        run_verification(Manifest(tuple(m.select("visual")), root=m.root), split_kfold(m, 2, 0), embed, spectrum="thermal")


def test_embedding_source_table(corpus):
    m = load_manifest(corpus / "manifest.csv")
    src = EmbeddingSource(None, table={})
    with pytest.raises(DataError, match="no precomputed"):
        src(m.entries[0])
    with pytest.raises(ValidationError):
        EmbeddingSource(None)


def test_run_identification(corpus):
    m = load_manifest(corpus / "manifest.csv")
    matrix, results = run_identification(m, blockmean_embedder(), k=3, seed=0)
    assert matrix.rows == ["visual", "masked-visual", "thermal", "masked-thermal", "hybrid"]
    assert len(results) == 3 * 25
    means = matrix.means()
    assert np.all(np.diag(means) == 1.0)
    # cross-spectral cells sit well below the diagonal
    assert means[0, 2] < 0.5 and means[2, 0] < 0.5
    with pytest.raises(ValidationError):
        run_identification(m, blockmean_embedder(), ["infrared"])


def test_checkpoint_routes(corpus):
    m = load_manifest(corpus / "manifest.csv")
    loader = FaceLoader(m)
    subject = "s005"
    vis_u = [e for e in m.select("visual", "unmasked") if e.subject_id == subject][1]
    vis_m = [e for e in m.select("visual", "masked") if e.subject_id == subject][1]
    th = [e for e in m.select("thermal", "unmasked") if e.subject_id == subject][1]

    def exploding_thermal():
        raise AssertionError("thermal capture read on the unmasked route")

    d = checkpoint(loader(vis_u), False, m, blockmean_embedder(), thermal=exploding_thermal)
    assert d.route == "visual" and d.hybrid is None
    assert d.identity == subject
    assert d.distance == 0.0  # the probe is itself enrolled

    d = checkpoint(loader(vis_m), True, m, blockmean_embedder(), thermal=loader(th))
    assert d.route == "hybrid"
    assert d.hybrid == make_hybrid(loader(vis_m), loader(th))
    assert d.identity == subject
    assert any("built hybrid" in line for line in d.trace)
    assert d.to_dict()["hybrid_built"] is True

    with pytest.raises(DataError, match="thermal"):
        checkpoint(loader(vis_m), True, m, blockmean_embedder())


def test_checkpoint_rescales_captures(corpus):
    m = load_manifest(corpus / "manifest.csv")
    small = Raster.filled(64, 48, 100, 3)
    d = checkpoint(small, True, m, blockmean_embedder(), thermal=Raster.filled(116, 87, 100))
    assert d.trace[0].startswith("rescaled visual")
    assert any(t.startswith("rescaled thermal") for t in d.trace)
