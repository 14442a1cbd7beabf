"""
Pluggable crypto contract for the composition framework.

The protocol logic only needs keypairs, signatures and a notion of "who holds
which composition secret". ``LedgerCryptoProvider`` implements the contract
with real primitives from ``cryptography`` (Ed25519, AES-GCM) but draws every
key from the run's seeded RNG, so a run's sealed bytes are reproducible. Its
key ledger is the audit surface for secret confinement: unsealing succeeds
only for holders recorded in the ledger.
"""

import abc
import logging
import random
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

logger = logging.getLogger(__name__)


class NotAHolder(Exception):
    """Raised by unseal when the caller's ledger entry lacks the sealing secret."""


@dataclass(frozen=True)
class KeyPair:
    owner: str
    private_key: Ed25519PrivateKey
    public_key: bytes


class CryptoProvider(abc.ABC):
    """What the composition framework needs from a crypto backend."""

    @abc.abstractmethod
    def generate_keypair(self, owner: str) -> KeyPair: ...

    @abc.abstractmethod
    def sign(self, keypair: KeyPair, data: bytes) -> bytes: ...

    @abc.abstractmethod
    def verify(self, public_key: bytes, data: bytes, signature: bytes) -> bool: ...

    @abc.abstractmethod
    def new_secret(self, label: str) -> str:
        """Create a composition secret held by nobody; returns its id."""

    @abc.abstractmethod
    def grant(self, secret_id: str, holder: str) -> None: ...

    @abc.abstractmethod
    def holders(self, secret_id: str) -> frozenset[str]: ...

    @abc.abstractmethod
    def destroy_secret(self, secret_id: str) -> None: ...

    @abc.abstractmethod
    def seal(self, secret_id: str, plaintext: bytes) -> bytes: ...

    @abc.abstractmethod
    def unseal(self, holder: str, secret_id: str, sealed: bytes) -> bytes: ...

    def holds(self, holder: str, secret_id: str) -> bool:
        return holder in self.holders(secret_id)


class LedgerCryptoProvider(CryptoProvider):
    def __init__(self, rng: random.Random):
        self._rng = rng
        self._secrets: dict[str, bytes] = {}
        self._ledger: dict[str, set[str]] = {}
        self._destroyed: set[str] = set()
        self._secret_counter = 0
        self._nonce_counter = 0

    def _random_bytes(self, size: int) -> bytes:
        return self._rng.getrandbits(size * 8).to_bytes(size, "big")

    def generate_keypair(self, owner: str) -> KeyPair:
        private_key = Ed25519PrivateKey.from_private_bytes(self._random_bytes(32))
        public_key = private_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return KeyPair(owner, private_key, public_key)

    def sign(self, keypair: KeyPair, data: bytes) -> bytes:
        return keypair.private_key.sign(data)

    def verify(self, public_key: bytes, data: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, data)
        except (InvalidSignature, ValueError):
            return False
        return True

    def new_secret(self, label: str) -> str:
        self._secret_counter += 1
        secret_id = f"{label}/k{self._secret_counter}"
        # key material comes from the seeded stream
        self._secrets[secret_id] = self._random_bytes(16)
        self._ledger[secret_id] = set()
        return secret_id

    def grant(self, secret_id: str, holder: str) -> None:
        self._require(secret_id)
        self._ledger[secret_id].add(holder)

    def holders(self, secret_id: str) -> frozenset[str]:
        return frozenset(self._ledger.get(secret_id, ()))

    def destroy_secret(self, secret_id: str) -> None:
        self._secrets.pop(secret_id, None)
        self._ledger.pop(secret_id, None)
        self._destroyed.add(secret_id)
        logger.debug(f"Destroyed secret {secret_id}")

    def is_destroyed(self, secret_id: str) -> bool:
        return secret_id in self._destroyed

    def seal(self, secret_id: str, plaintext: bytes) -> bytes:
        key = self._require(secret_id)
        self._nonce_counter += 1
        nonce = struct.pack(">IQ", 0, self._nonce_counter)
        return nonce + AESGCM(key).encrypt(nonce, plaintext, secret_id.encode("utf-8"))

    def unseal(self, holder: str, secret_id: str, sealed: bytes) -> bytes:
        if holder not in self._ledger.get(secret_id, ()):
            raise NotAHolder(f"'{holder}' does not hold {secret_id}")
        key = self._require(secret_id)
        nonce, ciphertext = sealed[:12], sealed[12:]
        try:
            return AESGCM(key).decrypt(nonce, ciphertext, secret_id.encode("utf-8"))
        except InvalidTag as exc:
            raise NotAHolder(f"Envelope was not sealed under {secret_id}") from exc

    def _require(self, secret_id: str) -> bytes:
        try:
            return self._secrets[secret_id]
        except KeyError as exc:
            raise KeyError(f"Unknown or destroyed secret {secret_id}") from exc
