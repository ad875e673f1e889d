"""Deterministic challenge derivation (the non-interactive transcript).

A transcript is a running 32-byte hash state.  Absorbing binds data to
the state; drawing a challenge reduces the state hash into the field and
advances the state, so later challenges depend on everything absorbed
and drawn before them.  The session challenge pair (z, t) is derived
only after the model commitment, the public input and the witness
commitment are all fixed, which is what makes cross-component value
linking sound: no prover code path can observe z before the witness
root exists, because z is a function of it.
"""

from __future__ import annotations

import hashlib
import json

from .errors import EmptyTagError, VeritensorError
from .field import DEFAULT_FIELD, Challenge, Field

_INIT_STATE = hashlib.sha256(b"VT1\x00transcript-init").digest()

CHALLENGE_TAG_Z = "ZMUL-Z"
CHALLENGE_TAG_T = "PERM-T"


class SessionReuseError(VeritensorError):
    """Session challenges were already derived on this transcript."""


class Transcript:
    __slots__ = ("state", "log", "_session_done")

    def __init__(self):
        self.state = _INIT_STATE
        self.log = []
        self._session_done = False

    def absorb(self, tag: str, data: bytes) -> None:
        if not tag:
            raise EmptyTagError("absorb tag must be non-empty")
        tag_b = tag.encode("ascii")
        h = hashlib.sha256()
        h.update(self.state)
        h.update(tag_b)
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)
        self.state = h.digest()
        self.log.append(("absorb:" + tag, hashlib.sha256(data).hexdigest()))

    def challenge_field(self, tag: str, field: Field = DEFAULT_FIELD) -> int:
        """Draw a nonzero field element bound to the current state.

        A zero draw (probability 1/p) re-derives with an incremented
        counter.  The state advances to the digest that produced the
        accepted value.
        """
        if not tag:
            raise EmptyTagError("challenge tag must be non-empty")
        tag_b = tag.encode("ascii")
        counter = 0
        while True:
            d = hashlib.sha256(
                self.state + tag_b + counter.to_bytes(8, "little")
            ).digest()
            c = int.from_bytes(d[:16], "little") % field.modulus
            if c:
                break
            counter += 1
        self.state = d
        self.log.append(("challenge:" + tag, d.hex()))
        return c

    def derive_session(
        self,
        model_root: bytes,
        input_digest: bytes,
        witness_root: bytes,
        field: Field = DEFAULT_FIELD,
    ) -> Challenge:
        """Absorb the three session commitments and draw (z, t) once."""
        if self._session_done:
            raise SessionReuseError("session challenges already derived")
        self.absorb("MODEL-ROOT", model_root)
        self.absorb("INPUT", input_digest)
        self.absorb("WITNESS-ROOT", witness_root)
        z = self.challenge_field(CHALLENGE_TAG_Z, field)
        t = self.challenge_field(CHALLENGE_TAG_T, field)
        self._session_done = True
        return Challenge(z=z, t=t)

    def log_json(self) -> str:
        """Serializable absorb/challenge audit log."""
        return json.dumps([{"event": e, "digest": d} for e, d in self.log])


def derive_session_challenges(
    model_root: bytes,
    input_digest: bytes,
    witness_root: bytes,
    field: Field = DEFAULT_FIELD,
) -> tuple:
    """One (z, t) pair per inference session, shared by every component.

    Returns (Challenge, Transcript); the transcript is consumed and will
    refuse a second derivation.
    """
    tr = Transcript()
    ch = tr.derive_session(model_root, input_digest, witness_root, field)
    return ch, tr
