"""Language models over flattened dialogues.

Three variants share one recurrence h_t = tanh(H h_{t-1} + P E[w_{t-1}]):

* ``RnnLm``       -- output logits O^T h_t.
* ``AttentionRnnLm`` -- a context vector z_t is formed by attending over the
  representations of every consumed token, and the output becomes
  O^T (Oh h_t + Oz z_t). The attention scope grows by one per consumed
  token: the weight row produced at position t has length exactly t.
* ``TopicAttentionRnnLm`` -- adds a per-dialogue topic-proportion feature:
  O^T (Oh h_t + Oz z_t + Otheta theta).

Token representation: r_i concatenates the input embedding of token i with
the hidden state produced when that token was consumed, so r_i has length
d_e + d. The attention query for position t is the previous state h_{t-1};
position 0 has an empty scope and is scored without attention.

Gradients are hand-derived backward passes validated against central
finite differences (see tests); no autodiff framework is involved.
"""

from dataclasses import dataclass

import numpy as np

from .. import corpus
from ..errors import DataError, NumericalError
from ..numeric import log_softmax, softmax, uniform_init, zero_grads
from .base import DialogueScore, LmDecodeState, SequenceScore


@dataclass
class LmExample:
    """One training/eval item: a flattened dialogue, plus its topic feature."""

    tokens: list
    theta: np.ndarray = None


class RnnLm:
    """Plain recurrent language model."""

    kind = "rnn"
    attends = False

    def __init__(self, d, d_e, vocab_size, seed=0, params=None):
        self.d = d
        self.d_e = d_e
        self.V = vocab_size
        if params is None:
            rng = np.random.default_rng(seed)
            params = self._init_params(rng)
        self.params = params
        self._check_shapes()

    def _init_params(self, rng):
        d, d_e, V = self.d, self.d_e, self.V
        return {
            "H": uniform_init((d, d), rng),
            "P": uniform_init((d, d_e), rng),
            "E": uniform_init((d_e, V), rng),
            "O": uniform_init((d, V), rng),
        }

    def _expected_shapes(self):
        d, d_e, V = self.d, self.d_e, self.V
        return {"H": (d, d), "P": (d, d_e), "E": (d_e, V), "O": (d, V)}

    def _check_shapes(self):
        expected = self._expected_shapes()
        if set(self.params) != set(expected):
            raise DataError(
                f"parameter names {sorted(self.params)} != expected {sorted(expected)}"
            )
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise DataError(
                    f"parameter {name} has shape {self.params[name].shape}, expected {shape}"
                )

    def dims(self):
        return {"d": self.d, "d_e": self.d_e, "V": self.V}

    # ------------------------------------------------------------------
    # single-step operations

    def step(self, h_prev, token):
        """h_t = tanh(H h_prev + P E[token]); the initial h is the zero vector."""
        if not (0 <= token < self.V):
            raise DataError(f"token id {token} out of range for V={self.V}")
        p = self.params
        return np.tanh(p["H"] @ h_prev + p["P"] @ p["E"][:, token])

    def next_dist(self, h):
        """Distribution over the vocabulary given the current state."""
        return softmax(self.params["O"].T @ h)

    # ------------------------------------------------------------------
    # teacher-forced scoring

    def _states(self, tokens):
        n = len(tokens)
        states = np.zeros((n, self.d))
        for t in range(1, n):
            states[t] = self.step(states[t - 1], tokens[t - 1])
        return states

    def score_sequence(self, tokens, theta=None):
        """Total and per-position log-likelihood of ``tokens``.

        The first position is scored from the zero initial state; every
        later position t from the state that consumed tokens 0..t-1.
        """
        tokens = list(tokens)
        if not tokens:
            raise DataError("cannot score an empty sequence")
        fw = self._forward(tokens, theta)
        per_token = np.array(
            [fw["logps"][t][tokens[t]] for t in range(len(tokens))]
        )
        argmax = np.array([int(np.argmax(lp)) for lp in fw["logps"]])
        return SequenceScore(
            logp=float(per_token.sum()),
            per_token=per_token,
            argmax=argmax,
            alphas=fw.get("alphas"),
        )

    def _forward(self, tokens, theta=None):
        states = self._states(tokens)
        logits = states @ self.params["O"]  # (n, V)
        logps = [log_softmax(row) for row in logits]
        return {"states": states, "outs": states, "logps": logps}

    # ------------------------------------------------------------------
    # backward

    def loss_and_grads(self, tokens, theta=None):
        """Negative log-likelihood and hand-derived gradients for one sequence."""
        tokens = list(tokens)
        fw = self._forward(tokens, theta)
        n = len(tokens)
        grads = zero_grads(self.params)
        dstates = np.zeros((n, self.d))
        loss = 0.0
        for t in range(n):
            loss -= fw["logps"][t][tokens[t]]
            dlogits = np.exp(fw["logps"][t])
            dlogits[tokens[t]] -= 1.0
            self._backward_output(t, dlogits, fw, grads, dstates, theta)
        self._backward_attention(tokens, fw, grads, dstates)
        self._bptt(tokens, fw["states"], grads, dstates)
        if not np.isfinite(loss):
            raise NumericalError("non-finite loss in backward pass")
        return float(loss), grads

    def _backward_output(self, t, dlogits, fw, grads, dstates, theta):
        grads["O"] += np.outer(fw["states"][t], dlogits)
        dstates[t] += self.params["O"] @ dlogits

    def _backward_attention(self, tokens, fw, grads, dstates):
        pass

    def _bptt(self, tokens, states, grads, dstates):
        p = self.params
        for t in range(len(tokens) - 1, 0, -1):
            da = dstates[t] * (1.0 - states[t] * states[t])
            grads["H"] += np.outer(da, states[t - 1])
            grads["P"] += np.outer(da, p["E"][:, tokens[t - 1]])
            grads["E"][:, tokens[t - 1]] += p["P"].T @ da
            dstates[t - 1] += p["H"].T @ da

    # ------------------------------------------------------------------
    # stepwise decoding

    def begin(self, prefix, theta=None):
        state = LmDecodeState(h=np.zeros(self.d), theta=theta)
        for tok in prefix:
            state = self.advance(state, tok)
        return state

    def advance(self, state, token):
        h_new = self.step(state.h, token)
        new = LmDecodeState(
            tokens=state.tokens + [token],
            h=h_new,
            prev_h=state.h,
            theta=state.theta,
        )
        if self.attends:
            rep = np.concatenate([self.params["E"][:, token], h_new])
            new.reps = state.reps + [rep]
            new.ureps = state.ureps + [self.params["U"] @ rep]
        return new

    def step_dist(self, state, want_alpha=False):
        """Next-token distribution from a decode state (and the weight row)."""
        return self.next_dist(state.h), None

    # ------------------------------------------------------------------
    # dialogue plumbing

    def make_example(self, dialogue):
        return LmExample(tokens=corpus.flatten(dialogue))

    def example_loss_and_grads(self, ex):
        return self.loss_and_grads(ex.tokens, ex.theta)

    def example_score(self, ex):
        return self.score_sequence(ex.tokens, ex.theta)

    def score_dialogue(self, dialogue):
        ex = self.make_example(dialogue)
        s = self.example_score(ex)
        start, stop = corpus.last_utterance_span(dialogue)
        return DialogueScore(
            per_token=s.per_token,
            argmax=s.argmax,
            refs=np.array(ex.tokens),
            last_slice=slice(start, stop),
        )


class AttentionRnnLm(RnnLm):
    """Recurrent LM with a dynamic attention scope over the consumed tokens."""

    kind = "arnn"
    attends = True

    @property
    def d_z(self):
        return self.d_e + self.d

    def _init_params(self, rng):
        params = super()._init_params(rng)
        d, d_z = self.d, self.d_z
        params.update(
            {
                "W": uniform_init((d, d), rng),
                "U": uniform_init((d, d_z), rng),
                "b": uniform_init((d,), rng),
                "Oh": uniform_init((d, d), rng),
                "Oz": uniform_init((d, d_z), rng),
            }
        )
        return params

    def _expected_shapes(self):
        shapes = super()._expected_shapes()
        d, d_z = self.d, self.d_z
        shapes.update(
            {"W": (d, d), "U": (d, d_z), "b": (d,), "Oh": (d, d), "Oz": (d, d_z)}
        )
        return shapes

    # ------------------------------------------------------------------
    # single-step operations

    def attend(self, h_prev, reps):
        """Context vector and weights over the token representations so far.

        reps is the list (or (t, d_e+d) array) of representations of every
        consumed token; the scope must be non-empty.
        """
        R = np.asarray(reps, dtype=np.float64)
        if R.ndim == 1:
            R = R.reshape(1, -1)
        if R.size == 0:
            raise DataError("attention over an empty history")
        p = self.params
        pre = np.tanh(p["W"] @ h_prev + R @ p["U"].T)
        alpha = softmax(pre @ p["b"])
        z = alpha @ R
        return z, alpha

    def next_dist(self, h, z=None, theta=None):
        """Distribution from the state and the attention context."""
        return softmax(self.params["O"].T @ self._output(h, z, theta))

    def _output(self, h, z, theta):
        p = self.params
        out = p["Oh"] @ h
        if z is not None:
            out = out + p["Oz"] @ z
        return out

    # ------------------------------------------------------------------
    # teacher-forced scoring

    def _forward(self, tokens, theta=None):
        p = self.params
        n = len(tokens)
        states = self._states(tokens)
        # rep[i] pairs token i's embedding with the state that consumed it
        R = np.empty((max(n - 1, 0), self.d_z))
        for i in range(n - 1):
            R[i, : self.d_e] = p["E"][:, tokens[i]]
            R[i, self.d_e :] = states[i + 1]
        UR = R @ p["U"].T  # (n-1, d)
        outs = np.empty((n, self.d))
        pre_list = [None] * n
        alphas = [None] * n
        zs = [None] * n
        for t in range(n):
            z = None
            if t >= 1:
                pre = np.tanh(p["W"] @ states[t - 1] + UR[:t])
                alpha = softmax(pre @ p["b"])
                z = alpha @ R[:t]
                pre_list[t], alphas[t], zs[t] = pre, alpha, z
            outs[t] = self._output(states[t], z, theta)
        logits = outs @ p["O"]
        logps = [log_softmax(row) for row in logits]
        return {
            "states": states,
            "R": R,
            "pre": pre_list,
            "alphas": alphas,
            "zs": zs,
            "outs": outs,
            "logps": logps,
        }

    # ------------------------------------------------------------------
    # backward

    def _backward_output(self, t, dlogits, fw, grads, dstates, theta):
        p = self.params
        grads["O"] += np.outer(fw["outs"][t], dlogits)
        dout = p["O"] @ dlogits
        grads["Oh"] += np.outer(dout, fw["states"][t])
        dstates[t] += p["Oh"].T @ dout
        if fw["zs"][t] is not None:
            grads["Oz"] += np.outer(dout, fw["zs"][t])
        if theta is not None:
            grads["Otheta"] += np.outer(dout, theta)
        fw.setdefault("douts", {})[t] = dout

    def _backward_attention(self, tokens, fw, grads, dstates):
        p = self.params
        n = len(tokens)
        if n < 2:
            return
        drep = np.zeros_like(fw["R"])
        for t in range(1, n):
            dout = fw["douts"][t]
            dz = p["Oz"].T @ dout
            Rt = fw["R"][:t]
            pre = fw["pre"][t]
            alpha = fw["alphas"][t]
            dalpha = Rt @ dz
            dbeta = alpha * (dalpha - alpha @ dalpha)
            grads["b"] += pre.T @ dbeta
            dpre = np.outer(dbeta, p["b"]) * (1.0 - pre * pre)
            dsum = dpre.sum(axis=0)
            grads["W"] += np.outer(dsum, fw["states"][t - 1])
            dstates[t - 1] += p["W"].T @ dsum
            grads["U"] += dpre.T @ Rt
            drep[:t] += np.outer(alpha, dz) + dpre @ p["U"]
        # scatter representation gradients back to embeddings and states
        dstates[1:n] += drep[:, self.d_e :]
        np.add.at(grads["E"].T, np.asarray(tokens[:-1]), drep[:, : self.d_e])

    # ------------------------------------------------------------------
    # stepwise decoding

    def step_dist(self, state, want_alpha=False):
        t = len(state.tokens)
        if t == 0:
            probs = self.next_dist(state.h, None, state.theta)
            return probs, None
        p = self.params
        pre = np.tanh(p["W"] @ state.prev_h + np.asarray(state.ureps))
        alpha = softmax(pre @ p["b"])
        z = alpha @ np.asarray(state.reps)
        probs = self.next_dist(state.h, z, state.theta)
        return probs, (alpha if want_alpha else None)


class TopicAttentionRnnLm(AttentionRnnLm):
    """Attention LM with an extra per-dialogue topic-proportion feature.

    ``theta_provider`` maps a Dialogue to its K-dim topic proportions; it
    defaults to the uniform vector so the model is usable without a trained
    topic structure.
    """

    kind = "tarnn"

    def __init__(self, d, d_e, vocab_size, n_topics, seed=0, params=None,
                 theta_provider=None):
        self.K = n_topics
        super().__init__(d, d_e, vocab_size, seed=seed, params=params)
        self.theta_provider = theta_provider or (lambda dialogue: np.full(self.K, 1.0 / self.K))

    def _init_params(self, rng):
        params = super()._init_params(rng)
        params["Otheta"] = uniform_init((self.d, self.K), rng)
        return params

    def _expected_shapes(self):
        shapes = super()._expected_shapes()
        shapes["Otheta"] = (self.d, self.K)
        return shapes

    def dims(self):
        return {"d": self.d, "d_e": self.d_e, "V": self.V, "K": self.K}

    def _validate_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.K,):
            raise NumericalError(f"theta must have length K={self.K}")
        if np.any(theta < 0) or abs(theta.sum() - 1.0) > 1e-6:
            raise NumericalError("theta must be a probability vector (sum 1 within 1e-6)")
        return theta

    def next_dist(self, h, z=None, theta=None):
        if theta is not None:
            theta = self._validate_theta(theta)
        return softmax(self.params["O"].T @ self._output(h, z, theta))

    def _output(self, h, z, theta):
        out = super()._output(h, z, theta)
        if theta is not None:
            out = out + self.params["Otheta"] @ theta
        return out

    def score_sequence(self, tokens, theta=None):
        if theta is None:
            theta = np.full(self.K, 1.0 / self.K)
        return super().score_sequence(tokens, self._validate_theta(theta))

    def loss_and_grads(self, tokens, theta=None):
        if theta is None:
            theta = np.full(self.K, 1.0 / self.K)
        return super().loss_and_grads(tokens, self._validate_theta(theta))

    def begin(self, prefix, theta=None):
        # theta rides along in the decode state; step_dist passes it through
        if theta is None:
            theta = np.full(self.K, 1.0 / self.K)
        return super().begin(prefix, self._validate_theta(theta))

    def make_example(self, dialogue):
        theta = self._validate_theta(self.theta_provider(dialogue))
        return LmExample(tokens=corpus.flatten(dialogue), theta=theta)
