from .ckks import (
    DEFAULT_PARAMS,
    TEST_PARAMS,
    Ciphertext,
    CkksParams,
    KeyPair,
    PlainPoly,
    add,
    decode,
    decrypt,
    deserialize_ct,
    encode,
    encrypt,
    keygen,
    mul_scalar_rescale,
    pack_update,
    serialize_ct,
    unpack_update,
)

__all__ = [
    "DEFAULT_PARAMS",
    "TEST_PARAMS",
    "Ciphertext",
    "CkksParams",
    "KeyPair",
    "PlainPoly",
    "add",
    "decode",
    "decrypt",
    "deserialize_ct",
    "encode",
    "encrypt",
    "keygen",
    "mul_scalar_rescale",
    "pack_update",
    "serialize_ct",
    "unpack_update",
]
