import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.featurizers.path_featurizer import (
    DEFAULT_ENV_MAP,
    ByteVocab,
    PathFeaturizer,
    build_byte_vocab,
    encode_path,
    load_byte_vocab,
    load_env_map,
    normalize_path,
    save_byte_vocab,
)
from src.featurizers.sequences import PAD_ID, RARE_ID, pad_truncate, stack_sequences
from src.utils.errors import InputError

HELD_OUT_USERS = ['alice', 'jdoe42', 'bob.smith', 'mkowalski', 'zz_admin', 'Renée']


@pytest.mark.parametrize('raw, expected', [
    ('C:\\users\\bob\\Desktop\\04-CA\\8853.vbs', '[drive]\\users\\[user]\\desktop\\04-ca\\8853.vbs'),
    ('\\\\company\\priv\\timesheets\\april2021.xlsm', '[net]\\company\\priv\\timesheets\\april2021.xlsm'),
    ('[drive]\\x.exe', '[drive]\\x.exe'),
    ('c:/Windows/System32/cmd.exe', '[drive]\\windows\\system32\\cmd.exe'),
    ('%WINDIR%\\notepad.exe', '[drive]\\windows\\notepad.exe'),
    ('%temp%\\dropper.exe', '[drive]\\users\\[user]\\appdata\\local\\temp\\dropper.exe'),
    ('%notavar%\\a.exe', '%notavar%\\a.exe'),
    ('C:\\Users\\Public\\run.bat', '[drive]\\users\\public\\run.bat'),
    ('\\\\?\\C:\\long\\path.exe', '[drive]\\long\\path.exe'),
    ('\\\\?\\UNC\\fileserver\\share\\a.dll', '[net]\\fileserver\\share\\a.dll'),
    ('relative\\tool.exe', 'relative\\tool.exe'),
])
def test_normalize_examples(raw, expected):
    assert normalize_path(raw) == expected


@pytest.mark.parametrize('name', HELD_OUT_USERS)
def test_usernames_do_not_survive(name):
    normalized = normalize_path(f"C:\\Users\\{name}\\AppData\\Roaming\\x.exe")
    assert name.lower() not in normalized
    assert normalized.startswith('[drive]\\users\\[user]\\')


segments = st.text(alphabet='abcdefghijXYZ0123456789 ._-', min_size=1, max_size=8)
prefixes = st.sampled_from(['C:\\', 'd:/', 'E:', '\\\\server\\', '%windir%\\', '%TEMP%\\', '%unknown%\\',
                            'C:\\Users\\someone\\', '\\\\?\\C:\\', ''])


@given(prefixes, st.lists(segments, min_size=1, max_size=6), st.sampled_from(['\\', '/']))
def test_normalize_is_idempotent(prefix, parts, sep):
    once = normalize_path(prefix + sep.join(parts))
    assert normalize_path(once) == once
    assert once == once.lower()


def test_build_byte_vocab_examples():
    assert build_byte_vocab(['aab'], 2).mapping() == {ord('a'): 2, ord('b'): 3}
    assert build_byte_vocab(['ab', 'ba'], 1).mapping() == {ord('a'): 2}


def test_full_vocab_has_no_rare_bytes_on_training_corpus():
    corpus = ['[drive]\\windows\\system32\\cmd.exe', '[net]\\srv\\é.txt']
    vocab = build_byte_vocab(corpus, 256)
    for text in corpus:
        assert RARE_ID not in vocab.lookup(text.encode('utf-8'))


def test_build_byte_vocab_rejects_empty_corpus():
    with pytest.raises(InputError):
        build_byte_vocab([], 10)


def test_byte_vocab_size_includes_reserved_ids():
    assert build_byte_vocab(['abc'], 150).size == 152


def test_encode_path_examples():
    vocab = ByteVocab([ord('a'), ord('b')], capacity=2)
    seq = encode_path('ab', vocab, 4)
    assert seq.ids.tolist() == [2, 3, 0, 0]
    assert seq.true_length == 2
    assert encode_path('abc', vocab, 4).ids.tolist() == [2, 3, 1, 0]
    full = build_byte_vocab(['abcd'], 4)
    truncated = encode_path('abcd', full, 2)
    assert truncated.ids.tolist() == full.lookup(b'ab').tolist()
    assert truncated.true_length == 4


def test_multibyte_characters_encode_as_utf8_bytes():
    vocab = build_byte_vocab(['é'], 4)
    assert encode_path('é', vocab, 3).true_length == 2


@settings(max_examples=50)
@given(st.text(max_size=300), st.integers(1, 120))
def test_encoded_length_is_always_n(text, n):
    vocab = build_byte_vocab(['[drive]\\windows\\system32'], 16)
    seq = encode_path(text, vocab, n)
    assert seq.ids.shape == (n,)
    assert seq.ids.max(initial=0) < vocab.size
    assert np.all(seq.ids[seq.true_length:] == PAD_ID)


def test_pad_truncate_requires_positive_length():
    with pytest.raises(InputError):
        pad_truncate([2, 3], 0)


def test_stack_sequences():
    stacked = stack_sequences([pad_truncate([2], 3), pad_truncate([3, 4, 5, 6], 3)])
    assert stacked.tolist() == [[2, 0, 0], [3, 4, 5]]


def test_vocab_file_roundtrip(tmp_path):
    vocab = build_byte_vocab(['[drive]\\users\\[user]\\a.exe', '[net]\\b'], 20)
    path = save_byte_vocab(vocab, tmp_path / 'path_vocab.txt')
    assert path.read_text(encoding='utf-8').startswith('# qv-byte-vocab v1 capacity=20 pad=0 rare=1')
    assert load_byte_vocab(path) == vocab


def test_vocab_file_rejects_foreign_header(tmp_path):
    path = tmp_path / 'vocab.txt'
    path.write_text('# something-else v1\n61\t2\n', encoding='utf-8')
    with pytest.raises(InputError):
        load_byte_vocab(path)


def test_env_map_file_overrides_defaults(tmp_path):
    path = tmp_path / 'env_map.txt'
    path.write_text('# site overrides\n%WINDIR%=[drive]\\winnt\n\nlabdata=[net]\\lab\n', encoding='utf-8')
    env_map = load_env_map(path)
    assert env_map['windir'] == '[drive]\\winnt'
    assert env_map['temp'] == DEFAULT_ENV_MAP['temp']
    assert normalize_path('%LabData%\\x', env_map) == '[net]\\lab\\x'


def test_env_map_file_rejects_bad_line(tmp_path):
    path = tmp_path / 'env_map.txt'
    path.write_text('windir [drive]\\windows\n', encoding='utf-8')
    with pytest.raises(InputError):
        load_env_map(path)


def test_featurizer_fit_encode_and_hash():
    raw = ['C:\\Users\\amy\\x.exe', 'C:\\Windows\\y.dll', '\\\\srv\\share\\z.doc']
    featurizer = PathFeaturizer.fit(raw, size=30, n=12)
    batch = featurizer.encode_batch(raw)
    assert batch.shape == (3, 12)
    assert np.array_equal(batch, PathFeaturizer.fit(raw, size=30, n=12).encode_batch(raw))
    other = PathFeaturizer(featurizer.vocab, n=12, env_map={'windir': '[drive]\\winnt'})
    assert other.config_hash() != featurizer.config_hash()
