"""Key pairs, signatures, and certificate chain-of-trust.

Signing uses ECDSA over NIST P-256 with deterministic nonces, so the same
key and message always produce the same signature bytes.  That property is
what lets a replayed chain reproduce byte-identical state.  Signatures are
stored as the raw 64-byte ``r || s`` concatenation; public keys as the
33-byte compressed point encoding.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .canonical import canonical_bytes, sha256_hex
from .errors import AlreadyExistsError, InvalidInputError, InvalidSeedError

SCHEME = "ecdsa-p256"
SIGNATURE_SIZE = 64
PUBLIC_KEY_SIZE = 33
MIN_SEED_BYTES = 16
MAX_CHAIN_HOPS = 64

# NIST P-256 group order; private scalars live in [1, order - 1].
_CURVE_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
_CURVE = ec.SECP256R1()

# A certificate's issuer must hold the next kind up the hierarchy;
# organisations are issued by other organisations (or themselves, at the root).
_ISSUER_KIND = {
    "device": "technician",
    "technician": "organisation",
    "organisation": "organisation",
}


@dataclass(frozen=True)
class Signature:
    """Raw 64-byte ECDSA signature plus the id of the key that produced it."""

    bytes: bytes
    signer_key_id: str

    def to_json(self) -> dict:
        return {"bytes": self.bytes.hex(), "signer_key_id": self.signer_key_id}

    @classmethod
    def from_json(cls, obj: dict) -> "Signature":
        return cls(bytes=bytes.fromhex(obj["bytes"]), signer_key_id=obj["signer_key_id"])


@dataclass
class KeyPair:
    """An ECDSA P-256 key pair; ``public_key`` is the compressed point bytes."""

    private_key: ec.EllipticCurvePrivateKey
    public_key: bytes
    scheme: str = SCHEME

    @property
    def key_id(self) -> str:
        return key_id_of(self.public_key)

    @property
    def address(self) -> str:
        return address_of(self.public_key)

    def private_scalar_hex(self) -> str:
        """Hex private scalar, for keystore serialization."""
        return format(self.private_key.private_numbers().private_value, "064x")


def key_id_of(public_key: bytes) -> str:
    return sha256_hex(public_key)


def address_of(public_key: bytes) -> str:
    """Account address: first 20 bytes of the public key hash, hex encoded."""
    return hashlib.sha256(public_key).digest()[:20].hex()


def generate_keypair(seed: Optional[bytes] = None) -> KeyPair:
    """Create a key pair, deterministically when *seed* is given.

    The seed must carry at least 16 bytes of material; it is stretched to a
    scalar through sha256, so any two distinct seeds give unrelated keys.
    """
    if seed is not None:
        if not isinstance(seed, (bytes, bytearray)) or len(seed) < MIN_SEED_BYTES:
            raise InvalidSeedError(f"seed must be at least {MIN_SEED_BYTES} bytes")
        material = bytes(seed)
    else:
        material = os.urandom(32)
    digest = hashlib.sha256(b"caltrace-keygen:" + material).digest()
    scalar = int.from_bytes(digest, "big") % (_CURVE_ORDER - 1) + 1
    private = ec.derive_private_key(scalar, _CURVE)
    public = private.public_key().public_bytes(Encoding.X962, PublicFormat.CompressedPoint)
    return KeyPair(private_key=private, public_key=public)


def keypair_from_scalar_hex(scalar_hex: str) -> KeyPair:
    """Rebuild a key pair from a keystore entry."""
    scalar = int(scalar_hex, 16)
    if not 1 <= scalar < _CURVE_ORDER:
        raise InvalidSeedError("private scalar out of range")
    private = ec.derive_private_key(scalar, _CURVE)
    public = private.public_key().public_bytes(Encoding.X962, PublicFormat.CompressedPoint)
    return KeyPair(private_key=private, public_key=public)


def sign(message: bytes, key: KeyPair) -> Signature:
    """Sign *message*; deterministic for a fixed key and message."""
    if not message:
        raise InvalidInputError("cannot sign an empty message")
    der = key.private_key.sign(
        message, ec.ECDSA(hashes.SHA256(), deterministic_signing=True)
    )
    r, s = decode_dss_signature(der)
    raw = r.to_bytes(32, "big") + s.to_bytes(32, "big")
    return Signature(bytes=raw, signer_key_id=key.key_id)


@lru_cache(maxsize=65536)
def _public_key_object(public_key: bytes) -> Optional[ec.EllipticCurvePublicKey]:
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, public_key)
    except ValueError:
        return None


def verify(message: bytes, signature, public_key: bytes) -> bool:
    """Check a signature; returns False (never raises) on any malformed input."""
    raw = signature.bytes if isinstance(signature, Signature) else signature
    if not isinstance(raw, (bytes, bytearray)) or len(raw) != SIGNATURE_SIZE:
        return False
    if not message:
        return False
    key_obj = _public_key_object(bytes(public_key))
    if key_obj is None:
        return False
    r = int.from_bytes(raw[:32], "big")
    s = int.from_bytes(raw[32:], "big")
    try:
        der = encode_dss_signature(r, s)
        key_obj.verify(der, message, ec.ECDSA(hashes.SHA256()))
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class CertificateRecord:
    """Binds a subject id and kind to a public key, vouched for by an issuer.

    ``issuer_signature`` covers the signing payload (subject id, kind, key,
    scheme); the issuer is named by id and resolved through a store when a
    chain is walked.
    """

    subject_id: str
    subject_kind: str
    public_key: bytes
    issuer_id: str
    issuer_signature: Signature
    scheme: str = SCHEME

    def signing_payload(self) -> bytes:
        return canonical_bytes(
            {
                "public_key": self.public_key.hex(),
                "scheme": self.scheme,
                "subject_id": self.subject_id,
                "subject_kind": self.subject_kind,
            }
        )

    def to_json(self) -> dict:
        return {
            "issuer_id": self.issuer_id,
            "issuer_signature": self.issuer_signature.to_json(),
            "public_key": self.public_key.hex(),
            "scheme": self.scheme,
            "subject_id": self.subject_id,
            "subject_kind": self.subject_kind,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CertificateRecord":
        return cls(
            subject_id=obj["subject_id"],
            subject_kind=obj["subject_kind"],
            public_key=bytes.fromhex(obj["public_key"]),
            issuer_id=obj["issuer_id"],
            issuer_signature=Signature.from_json(obj["issuer_signature"]),
            scheme=obj.get("scheme", SCHEME),
        )


def make_certificate(
    subject_id: str,
    subject_kind: str,
    subject_public_key: bytes,
    issuer_id: str,
    issuer_key: KeyPair,
) -> CertificateRecord:
    """Issue a certificate for *subject_id*, signed with *issuer_key*."""
    if subject_kind not in _ISSUER_KIND:
        raise InvalidInputError(f"unknown subject kind: {subject_kind!r}")
    draft = CertificateRecord(
        subject_id=subject_id,
        subject_kind=subject_kind,
        public_key=subject_public_key,
        issuer_id=issuer_id,
        issuer_signature=Signature(b"\x00" * SIGNATURE_SIZE, ""),
    )
    sig = sign(draft.signing_payload(), issuer_key)
    return CertificateRecord(
        subject_id=subject_id,
        subject_kind=subject_kind,
        public_key=subject_public_key,
        issuer_id=issuer_id,
        issuer_signature=sig,
    )


def self_signed_root(subject_id: str, key: KeyPair) -> CertificateRecord:
    """Root-of-trust certificate: an organisation that vouches for itself."""
    return make_certificate(subject_id, "organisation", key.public_key, subject_id, key)


class CertificateStore:
    """In-memory certificate registry keyed by subject id; one cert per subject."""

    def __init__(self) -> None:
        self._by_subject: dict[str, CertificateRecord] = {}

    def add(self, cert: CertificateRecord) -> None:
        if cert.subject_id in self._by_subject:
            raise AlreadyExistsError(f"certificate already registered for {cert.subject_id!r}")
        self._by_subject[cert.subject_id] = cert

    def get(self, subject_id: str) -> Optional[CertificateRecord]:
        return self._by_subject.get(subject_id)

    def remove(self, subject_id: str) -> None:
        self._by_subject.pop(subject_id, None)

    def __contains__(self, subject_id: str) -> bool:
        return subject_id in self._by_subject

    def __len__(self) -> int:
        return len(self._by_subject)

    def __iter__(self) -> Iterator[CertificateRecord]:
        return iter(self._by_subject.values())

    def subject_ids(self) -> list[str]:
        return sorted(self._by_subject)


def verify_chain_of_trust(
    cert: CertificateRecord,
    root: CertificateRecord,
    store: CertificateStore,
    max_hops: int = MAX_CHAIN_HOPS,
    check_signatures: bool = True,
) -> bool:
    """Walk issuer links from *cert* and decide whether it anchors at *root*.

    Every hop must resolve in the store, carry a kind the next link is
    allowed to be issued by, and (unless *check_signatures* is off) verify
    under the issuer's public key.  The walk terminates only at a
    self-signed certificate that is byte-identical in identity to the
    pinned root.  Cycles and chains longer than *max_hops* fail.
    """
    seen: set[str] = set()
    current = cert
    for _ in range(max_hops + 1):
        if current.subject_id in seen:
            return False
        seen.add(current.subject_id)
        issuer = store.get(current.issuer_id)
        if issuer is None:
            return False
        expected_kind = _ISSUER_KIND.get(current.subject_kind)
        if expected_kind is None or issuer.subject_kind != expected_kind:
            return False
        if check_signatures and not verify(
            current.signing_payload(), current.issuer_signature, issuer.public_key
        ):
            return False
        if current.issuer_id == current.subject_id:
            return (
                current.subject_id == root.subject_id
                and current.public_key == root.public_key
            )
        current = issuer
    return False
