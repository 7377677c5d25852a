"""Pooling, layer combination, and whitening."""

import io

import numpy as np
import pytest

from conftest import make_pooled_records, make_tokens_records
from whb import (
    ConfigError,
    DegenerateInputError,
    EmbeddingMatrix,
    HiddenStateFileHeader,
    HiddenStateRecord,
    PipelineConfig,
    Pooling,
    RecordKind,
    apply_whitening,
    combine_layers,
    embed_sentences,
    fit_whitening,
    load_whitening_transform,
    pool_sentence,
    read_whitening_transform,
    save_whitening_transform,
    write_whitening_transform,
)


def tokens_record(layer1_tokens, sentence_id=0):
    """TOKENS record whose layer 1 holds the given token vectors."""
    tokens = np.asarray(layer1_tokens, dtype=np.float64)
    data = np.stack([np.zeros_like(tokens), tokens], axis=0)
    return HiddenStateRecord(
        sentence_id=sentence_id,
        token_count=tokens.shape[0],
        data=data,
        kind=RecordKind.TOKENS,
    )


class TestPooling:
    def test_avg_two_tokens(self):
        rec = tokens_record([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(pool_sentence(rec, 1, Pooling.AVG), [2.0, 3.0])

    def test_cls_two_tokens(self):
        rec = tokens_record([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(pool_sentence(rec, 1, Pooling.CLS), [1.0, 2.0])

    def test_single_token_cls_equals_avg(self):
        rec = tokens_record([[7.0, -1.0]])
        cls = pool_sentence(rec, 1, Pooling.CLS)
        avg = pool_sentence(rec, 1, Pooling.AVG)
        np.testing.assert_array_equal(cls, avg)

    def test_pooled_record_planes(self):
        rng = np.random.default_rng(0)
        data = rng.normal(size=(3, 2, 4))
        rec = HiddenStateRecord(
            sentence_id=0, token_count=6, data=data, kind=RecordKind.POOLED
        )
        np.testing.assert_allclose(
            pool_sentence(rec, 2, Pooling.CLS), data[2, 0].astype(np.float64)
        )
        np.testing.assert_allclose(
            pool_sentence(rec, 2, Pooling.AVG), data[2, 1].astype(np.float64)
        )

    def test_layer_out_of_range(self):
        rec = tokens_record([[1.0, 2.0]])
        with pytest.raises(ConfigError, match="layer"):
            pool_sentence(rec, 5, Pooling.AVG)

    def test_average_includes_first_token(self):
        rng = np.random.default_rng(3)
        tokens = rng.normal(size=(5, 4))
        rec = tokens_record(tokens)
        np.testing.assert_allclose(
            pool_sentence(rec, 1, Pooling.AVG),
            tokens.astype(np.float32).astype(np.float64).mean(axis=0),
            rtol=1e-12,
        )


class TestCombineLayers:
    def test_two_layer_mean(self):
        vectors = {1: np.array([2.0, 0.0]), 12: np.array([0.0, 2.0])}
        np.testing.assert_allclose(combine_layers(vectors, (1, 12)), [1.0, 1.0])

    def test_singleton_identity(self):
        v = np.array([3.0, -1.0, 2.0])
        np.testing.assert_array_equal(combine_layers({12: v}, (12,)), v)

    def test_three_layer_mean(self):
        vectors = {
            1: np.array([3.0, 3.0]),
            2: np.array([0.0, 0.0]),
            12: np.array([3.0, 3.0]),
        }
        np.testing.assert_allclose(combine_layers(vectors, (1, 2, 12)), [2.0, 2.0])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(11)
        vectors = {l: rng.normal(size=6) for l in (0, 3, 7, 9)}
        a = combine_layers(vectors, (0, 3, 7, 9))
        b = combine_layers(vectors, (9, 7, 3, 0))
        np.testing.assert_array_equal(a, b)

    def test_missing_layer(self):
        with pytest.raises(ConfigError, match="layer"):
            combine_layers({1: np.zeros(2)}, (1, 2))

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            combine_layers({1: np.zeros(2), 2: np.zeros(3)}, (1, 2))


class TestPipelineConfig:
    def test_duplicate_layers_rejected(self):
        with pytest.raises(ConfigError):
            PipelineConfig(Pooling.AVG, (1, 1), False)

    def test_empty_layers_rejected(self):
        with pytest.raises(ConfigError):
            PipelineConfig(Pooling.AVG, (), False)

    def test_negative_layer_rejected(self):
        with pytest.raises(ConfigError):
            PipelineConfig(Pooling.AVG, (-1,), False)

    def test_layers_normalized_sorted(self):
        config = PipelineConfig(Pooling.AVG, (12, 1), False)
        assert config.layers == (1, 12)

    def test_validate_for_header(self):
        header = HiddenStateFileHeader(
            num_layers=13, hidden_dim=4, record_kind=RecordKind.TOKENS, num_sentences=1
        )
        PipelineConfig(Pooling.AVG, (0, 12), False).validate_for(header)
        with pytest.raises(ConfigError, match="layer out of range"):
            PipelineConfig(Pooling.AVG, (13,), False).validate_for(header)

    def test_label(self):
        config = PipelineConfig(Pooling.AVG, (1, 12), True)
        assert config.label == "token=AVG,layers=1+12,whitening=T"


class TestFitWhitening:
    def test_two_point_example(self):
        # E = [[1],[3]]: mean 2, unnormalized covariance [[2]], scale 2^-1/2
        E = EmbeddingMatrix(data=np.array([[1.0], [3.0]]))
        transform = fit_whitening(E)
        np.testing.assert_allclose(transform.mean, [2.0])
        assert transform.retained_dim == 1
        out = apply_whitening(E, transform)
        expected = np.array([[-1.0], [1.0]]) / np.sqrt(2.0)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_identical_rows_degenerate(self):
        E = EmbeddingMatrix(data=np.ones((4, 3)))
        with pytest.raises(DegenerateInputError):
            fit_whitening(E)

    def test_fewer_than_two_rows(self):
        with pytest.raises((ConfigError, DegenerateInputError)):
            fit_whitening(EmbeddingMatrix(data=np.ones((1, 3))))

    def test_full_rank_identity_covariance(self):
        rng = np.random.default_rng(77)
        E = EmbeddingMatrix(data=rng.normal(size=(500, 8)))
        transform = fit_whitening(E)
        assert transform.retained_dim == 8
        out = apply_whitening(E, transform).data
        gram = out.T @ out
        assert np.max(np.abs(gram - np.eye(8))) <= 1e-6
        assert np.max(np.abs(out.mean(axis=0))) <= 1e-9
        centered = out - out.mean(axis=0)
        assert np.max(np.abs(centered.T @ centered - np.eye(8))) <= 1e-6

    def test_rank_deficient_drops_dimensions(self):
        rng = np.random.default_rng(13)
        # rank-2 data embedded in 5 dims
        basis = rng.normal(size=(2, 5))
        coords = rng.normal(size=(40, 2))
        E = EmbeddingMatrix(data=coords @ basis + rng.normal(size=5))
        transform = fit_whitening(E)
        assert transform.retained_dim == 2
        out = apply_whitening(E, transform).data
        assert out.shape == (40, 2)
        np.testing.assert_allclose(out.T @ out, np.eye(2), atol=1e-8)

    def test_sign_canonicalization(self):
        rng = np.random.default_rng(21)
        E = EmbeddingMatrix(data=rng.normal(size=(60, 5)))
        transform = fit_whitening(E)
        peaks = np.argmax(np.abs(transform.rotation), axis=0)
        signs = transform.rotation[peaks, np.arange(transform.retained_dim)]
        assert np.all(signs > 0)

    def test_rotation_orthonormal(self):
        rng = np.random.default_rng(22)
        E = EmbeddingMatrix(data=rng.normal(size=(100, 6)))
        transform = fit_whitening(E)
        np.testing.assert_allclose(
            transform.rotation.T @ transform.rotation, np.eye(6), atol=1e-8
        )

    def test_scales_descending(self):
        rng = np.random.default_rng(23)
        E = EmbeddingMatrix(data=rng.normal(size=(100, 6)) * [10, 5, 3, 2, 1, 0.5])
        transform = fit_whitening(E)
        # descending eigenvalues means non-decreasing inverse square roots
        assert np.all(np.diff(transform.inv_sqrt_eigenvalues) >= 0)


class TestApplyWhitening:
    def test_mean_row_maps_to_zero(self):
        rng = np.random.default_rng(31)
        E = EmbeddingMatrix(data=rng.normal(size=(50, 4)))
        transform = fit_whitening(E)
        at_mean = EmbeddingMatrix(
            data=transform.mean[np.newaxis, :], sentence_ids=np.array([0], np.uint64)
        )
        np.testing.assert_allclose(
            apply_whitening(at_mean, transform).data, np.zeros((1, 4)), atol=1e-12
        )

    def test_two_point_transform_on_new_rows(self):
        transform = fit_whitening(EmbeddingMatrix(data=np.array([[1.0], [3.0]])))
        out = apply_whitening(
            EmbeddingMatrix(data=np.array([[2.0], [4.0]])), transform
        )
        # (2-2)/sqrt(2) = 0 and (4-2)/sqrt(2) = sqrt(2)
        np.testing.assert_allclose(
            out.data, np.array([[0.0], [np.sqrt(2.0)]]), atol=1e-12
        )

    def test_affine(self):
        rng = np.random.default_rng(41)
        E = EmbeddingMatrix(data=rng.normal(size=(30, 5)))
        transform = fit_whitening(E)
        x = rng.normal(size=(1, 5))
        y = rng.normal(size=(1, 5))

        def apply_rows(rows):
            m = EmbeddingMatrix(
                data=rows, sentence_ids=np.arange(rows.shape[0], dtype=np.uint64)
            )
            return apply_whitening(m, transform).data

        for alpha in (-1.5, 0.0, 0.25, 1.0, 2.0):
            mix = alpha * x + (1 - alpha) * y
            lhs = apply_rows(mix)
            rhs = alpha * apply_rows(x) + (1 - alpha) * apply_rows(y)
            np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_dimension_mismatch(self):
        transform = fit_whitening(EmbeddingMatrix(data=np.array([[1.0], [3.0]])))
        with pytest.raises(ConfigError):
            apply_whitening(EmbeddingMatrix(data=np.ones((2, 3))), transform)

    def test_ids_preserved(self):
        rng = np.random.default_rng(43)
        ids = np.array([9, 4, 7], dtype=np.uint64)
        E = EmbeddingMatrix(data=rng.normal(size=(3, 3)), sentence_ids=ids)
        out = apply_whitening(E, fit_whitening(E))
        np.testing.assert_array_equal(out.sentence_ids, ids)


class TestEmbedSentences:
    def test_single_sentence_avg(self):
        rng = np.random.default_rng(51)
        records = make_tokens_records(rng, 1, 3, 4)
        emb = embed_sentences(records, PipelineConfig(Pooling.AVG, (2,), False))
        np.testing.assert_allclose(
            emb.data[0], pool_sentence(records[0], 2, Pooling.AVG)
        )

    def test_two_layer_combination_matches_components(self):
        rng = np.random.default_rng(52)
        records = make_tokens_records(rng, 6, 4, 5)
        emb = embed_sentences(records, PipelineConfig(Pooling.AVG, (1, 3), False))
        for i, rec in enumerate(records):
            vectors = {
                1: pool_sentence(rec, 1, Pooling.AVG),
                3: pool_sentence(rec, 3, Pooling.AVG),
            }
            np.testing.assert_allclose(emb.data[i], combine_layers(vectors, (1, 3)))

    def test_whitened_output_identity_covariance(self):
        rng = np.random.default_rng(53)
        records = make_tokens_records(rng, 30, 3, 4)
        emb = embed_sentences(records, PipelineConfig(Pooling.AVG, (1, 2), True))
        gram = emb.data.T @ emb.data
        np.testing.assert_allclose(gram, np.eye(gram.shape[0]), atol=1e-6)

    def test_cls_on_pooled_records(self):
        rng = np.random.default_rng(54)
        records = make_pooled_records(rng, 5, 3, 4)
        emb = embed_sentences(records, PipelineConfig(Pooling.CLS, (1,), False))
        np.testing.assert_allclose(
            emb.data[2], records[2].data[1, 0].astype(np.float64)
        )

    def test_fit_corpus_matches_two_step(self):
        rng = np.random.default_rng(55)
        corpus_records = make_tokens_records(rng, 25, 3, 4)
        eval_records = make_tokens_records(rng, 10, 3, 4)
        config = PipelineConfig(Pooling.AVG, (1, 2), True)
        plain = PipelineConfig(Pooling.AVG, (1, 2), False)

        fit_matrix = embed_sentences(corpus_records, plain)
        via_flag = embed_sentences(eval_records, config, fit_corpus=fit_matrix)
        two_step = apply_whitening(
            embed_sentences(eval_records, plain), fit_whitening(fit_matrix)
        )
        np.testing.assert_array_equal(via_flag.data, two_step.data)

    def test_determinism(self):
        rng = np.random.default_rng(56)
        records = make_tokens_records(rng, 20, 3, 4)
        config = PipelineConfig(Pooling.AVG, (0, 2), True)
        a = embed_sentences(records, config)
        b = embed_sentences(records, config)
        assert a.data.tobytes() == b.data.tobytes()
        np.testing.assert_array_equal(a.sentence_ids, b.sentence_ids)

    def test_row_order_follows_input(self):
        rng = np.random.default_rng(57)
        records = make_tokens_records(rng, 5, 3, 4)
        shuffled = [records[i] for i in (3, 0, 4, 1, 2)]
        emb = embed_sentences(shuffled, PipelineConfig(Pooling.CLS, (1,), False))
        np.testing.assert_array_equal(emb.sentence_ids, [3, 0, 4, 1, 2])

    def test_empty_records_rejected(self):
        with pytest.raises(ConfigError):
            embed_sentences([], PipelineConfig(Pooling.AVG, (1,), False))


class TestCosinePreservingProperties:
    @staticmethod
    def pairwise_cosines(matrix):
        normed = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
        return normed @ normed.T

    def test_global_scaling_leaves_cosines(self):
        rng = np.random.default_rng(61)
        records = make_tokens_records(rng, 12, 3, 4)
        config = PipelineConfig(Pooling.AVG, (1, 2), False)
        base = embed_sentences(records, config).data
        # power-of-two factor: exact in the format's 32-bit storage
        scaled_records = [
            HiddenStateRecord(
                sentence_id=r.sentence_id,
                token_count=r.token_count,
                data=r.data.astype(np.float64) * 8.0,
                kind=r.kind,
            )
            for r in records
        ]
        scaled = embed_sentences(scaled_records, config).data
        np.testing.assert_allclose(
            self.pairwise_cosines(base), self.pairwise_cosines(scaled), atol=1e-12
        )

    def test_covariance_normalization_convention(self):
        # dividing the covariance by N only rescales the output globally,
        # so pairwise cosines are unchanged
        rng = np.random.default_rng(62)
        E = rng.normal(size=(80, 6))
        ours = apply_whitening(
            EmbeddingMatrix(data=E), fit_whitening(EmbeddingMatrix(data=E))
        ).data

        m = E.mean(axis=0)
        centered = E - m
        eigvals, eigvecs = np.linalg.eigh(centered.T @ centered / E.shape[0])
        variant = centered @ eigvecs[:, ::-1] / np.sqrt(eigvals[::-1])

        np.testing.assert_allclose(
            self.pairwise_cosines(ours), self.pairwise_cosines(variant), atol=1e-9
        )
        # and the two outputs differ by exactly the global factor sqrt(N)
        ratio = np.abs(variant) / np.abs(ours)
        np.testing.assert_allclose(ratio, np.sqrt(E.shape[0]), rtol=1e-6)


class TestTransformPersistence:
    def test_stream_roundtrip(self):
        rng = np.random.default_rng(71)
        E = EmbeddingMatrix(data=rng.normal(size=(50, 5)))
        transform = fit_whitening(E)
        buf = io.BytesIO()
        write_whitening_transform(transform, buf)
        buf.seek(0)
        back = read_whitening_transform(buf)
        # storage is 32-bit; loaded values are the float32 rounding exactly
        np.testing.assert_array_equal(
            back.mean, transform.mean.astype("<f4").astype(np.float64)
        )
        np.testing.assert_array_equal(
            back.rotation, transform.rotation.astype("<f4").astype(np.float64)
        )
        np.testing.assert_array_equal(
            back.inv_sqrt_eigenvalues,
            transform.inv_sqrt_eigenvalues.astype("<f4").astype(np.float64),
        )

    def test_path_roundtrip(self, tmp_path):
        rng = np.random.default_rng(72)
        E = EmbeddingMatrix(data=rng.normal(size=(30, 4)))
        transform = fit_whitening(E)
        path = tmp_path / "t.wht"
        save_whitening_transform(path, transform)
        back = load_whitening_transform(path)
        assert back.input_dim == 4
        assert back.retained_dim == transform.retained_dim
        np.testing.assert_allclose(back.rotation, transform.rotation, atol=1e-6)

    def test_reapplied_transform_close(self):
        rng = np.random.default_rng(73)
        E = EmbeddingMatrix(data=rng.normal(size=(40, 4)))
        transform = fit_whitening(E)
        buf = io.BytesIO()
        write_whitening_transform(transform, buf)
        buf.seek(0)
        back = read_whitening_transform(buf)
        np.testing.assert_allclose(
            apply_whitening(E, back).data,
            apply_whitening(E, transform).data,
            rtol=1e-4,
            atol=1e-5,
        )

    def test_bad_magic(self):
        with pytest.raises(Exception, match="magic"):
            read_whitening_transform(io.BytesIO(b"NOPE" + b"\x00" * 64))
