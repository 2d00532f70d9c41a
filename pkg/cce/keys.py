# PARAMETER NAME KEYS

DEFAULT_EMBEDDING_KEY = 'embedding'
DEFAULT_POSITION_KEY = 'position'
DEFAULT_OUTPUT_KEY = 'output'

DEFAULT_BLOCK_PREFIX = 'blocks'

# Compressible matrices of a transformer block, in canonical order
DEFAULT_Q_KEY = 'attn.q'
DEFAULT_K_KEY = 'attn.k'
DEFAULT_V_KEY = 'attn.v'
DEFAULT_O_KEY = 'attn.o'
DEFAULT_FFN_IN_KEY = 'ffn.w1'
DEFAULT_FFN_OUT_KEY = 'ffn.w2'

# Biases are stored, never compressed
DEFAULT_FFN_IN_BIAS_KEY = 'ffn.b1'
DEFAULT_FFN_OUT_BIAS_KEY = 'ffn.b2'

BLOCK_MATRIX_KEYS = (DEFAULT_Q_KEY, DEFAULT_K_KEY, DEFAULT_V_KEY, DEFAULT_O_KEY, DEFAULT_FFN_IN_KEY, DEFAULT_FFN_OUT_KEY)
BLOCK_BIAS_KEYS = (DEFAULT_FFN_IN_BIAS_KEY, DEFAULT_FFN_OUT_BIAS_KEY)


def block_key(layer_index, key):
    """Returns the full parameter name of ``key`` inside block ``layer_index``."""
    return f'{DEFAULT_BLOCK_PREFIX}.{layer_index}.{key}'


def split_block_key(name):
    """
    Splits a block parameter name into its block index and local key.

    :param name: A full parameter name, e.g. ``blocks.3.attn.q``.
    :return: A 2-tuple (layer_index, local_key), or (None, name) for non-block parameters.
    """
    parts = name.split('.', 2)
    if len(parts) == 3 and parts[0] == DEFAULT_BLOCK_PREFIX and parts[1].isdigit():
        return int(parts[1]), parts[2]
    return None, name
