"""Maximum-likelihood training with Adam, early stopping on dev perplexity,
and optional pretraining followed by fine-tuning.

The loss for one dialogue is the summed negative log-likelihood over the
positions its model scores; parameters are updated per sequence (batch
size 1), shuffled each epoch under the configured seed, so runs are
bit-reproducible.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError
from .models import make_model
from .numeric import clip_global_norm, global_norm


@dataclass
class TrainConfig:
    d: int = 300
    d_e: int = None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 50
    patience: int = 5
    clip: float = 5.0
    seed: int = 0
    eval_interval: int = 1  # epochs between dev evaluations

    def __post_init__(self):
        if self.d_e is None:
            self.d_e = self.d
        for name in ("d", "d_e", "max_epochs", "patience", "eval_interval"):
            if getattr(self, name) <= 0:
                raise DataError(f"config field {name} must be positive")
        if self.lr < 0 or self.clip <= 0:
            raise DataError("learning rate must be >= 0 and clip > 0")


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    @classmethod
    def from_config(cls, params, config):
        return cls(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                   eps=config.adam_eps)


def adam_update(state, params, grads):
    """One bias-corrected Adam step, applied in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter '{name}'")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / (1.0 - b1 ** state.t)
        v_hat = state.v[name] / (1.0 - b2 ** state.t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


@dataclass
class LogEntry:
    epoch: int
    seen: int
    train_loss: float
    dev_ppl: float
    best: bool

    def format_line(self):
        return f"{self.epoch}, {self.seen}, {self.train_loss!r}, {self.dev_ppl!r}, {int(self.best)}"


@dataclass
class TrainResult:
    model: object
    log: list = field(default_factory=list)

    @property
    def best_dev_ppl(self):
        return min(e.dev_ppl for e in self.log)


def _dev_ppl(model, examples):
    total_lp = 0.0
    total_tokens = 0
    for ex in examples:
        s = model.example_score(ex)
        total_lp += s.logp
        total_tokens += len(s.per_token)
    if total_tokens == 0:
        raise DataError("dev split scores zero tokens")
    return float(np.exp(-total_lp / total_tokens))


def train(kind, train_dialogues, dev_dialogues, config, vocab_size,
          theta_provider=None, n_topics=None, initial_model=None, log_lines=None):
    """Train one model variant; returns the best-dev checkpoint and the log.

    ``initial_model`` continues from an existing model (used by
    pretrain/fine-tune); otherwise a fresh model is built from
    ``config.seed``. ``log_lines``, when given, receives one formatted line
    per dev evaluation as it happens.
    """
    if not train_dialogues or not dev_dialogues:
        raise DataError("training needs non-empty train and dev splits")
    if initial_model is not None:
        model = initial_model
        if model.d != config.d or model.d_e != config.d_e or model.V != vocab_size:
            raise DataError(
                "initial model dimensions do not match the config/vocabulary "
                f"({model.dims()} vs d={config.d}, d_e={config.d_e}, V={vocab_size})"
            )
    else:
        model = make_model(kind, config.d, config.d_e, vocab_size,
                           n_topics=n_topics, seed=config.seed,
                           theta_provider=theta_provider)
    train_examples = [model.make_example(dlg) for dlg in train_dialogues]
    dev_examples = [model.make_example(dlg) for dlg in dev_dialogues]

    adam = AdamState.from_config(model.params, config)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    log = []
    best_ppl = np.inf
    best_params = None
    evals_since_best = 0
    seen = 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_examples))
        epoch_loss = 0.0
        for idx in order:
            try:
                loss, grads = model.example_loss_and_grads(train_examples[idx])
            except NumericalError as e:
                raise NumericalError(
                    f"epoch {epoch}, train sequence {idx}: {e}"
                ) from e
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, train sequence {idx}"
                )
            clip_global_norm(grads, config.clip)
            adam_update(adam, model.params, grads)
            epoch_loss += loss
            seen += 1
        if epoch % config.eval_interval != 0 and epoch != config.max_epochs:
            continue
        dev_ppl = _dev_ppl(model, dev_examples)
        improved = dev_ppl < best_ppl
        if improved:
            best_ppl = dev_ppl
            best_params = copy.deepcopy(model.params)
            evals_since_best = 0
        else:
            evals_since_best += 1
        entry = LogEntry(epoch, seen, epoch_loss / len(train_examples), dev_ppl, improved)
        log.append(entry)
        if log_lines is not None:
            log_lines.append(entry.format_line())
        if evals_since_best >= config.patience:
            break
    if best_params is not None:
        for name in model.params:
            model.params[name][...] = best_params[name]
    return TrainResult(model=model, log=log)


def pretrain_finetune(kind, pretrain_splits, target_splits, config, vocab_size,
                      theta_provider=None, n_topics=None, log_lines=None):
    """Train on the pretraining corpus, then fine-tune on the target corpus.

    ``pretrain_splits`` and ``target_splits`` are (train, dev) pairs that
    share the target vocabulary (out-of-vocabulary pretraining tokens are
    already mapped to <unk> at load time). An empty pretraining corpus
    degenerates to plain training on the target. The fine-tuning phase
    starts from the pretrained checkpoint with a fresh Adam state.
    """
    pre_train, pre_dev = pretrain_splits
    tgt_train, tgt_dev = target_splits
    if not pre_train:
        return train(kind, tgt_train, tgt_dev, config, vocab_size,
                     theta_provider=theta_provider, n_topics=n_topics,
                     log_lines=log_lines)
    phase1 = train(kind, pre_train, pre_dev, config, vocab_size,
                   theta_provider=theta_provider, n_topics=n_topics,
                   log_lines=log_lines)
    return train(kind, tgt_train, tgt_dev, config, vocab_size,
                 theta_provider=theta_provider, n_topics=n_topics,
                 initial_model=phase1.model, log_lines=log_lines)


__all__ = [
    "AdamState",
    "LogEntry",
    "TrainConfig",
    "TrainResult",
    "adam_update",
    "global_norm",
    "pretrain_finetune",
    "train",
]
