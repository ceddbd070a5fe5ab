"""The 1-D CNN: two convolutional blocks, the first with average pooling,
then a dense layer with softmax."""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)


def build_model(input_len: int = 40, filters: int = 128, width: int = 5, pool: int = 4,
                classes: int = 8, lr: float = 5e-5):
    import keras
    from keras import layers

    m = keras.Sequential([
        keras.Input(shape=(input_len, 1)),
        layers.Conv1D(filters, width, padding="same"),
        layers.Activation("relu"),
        layers.Dropout(0.1),
        layers.AveragePooling1D(pool_size=pool),
        layers.Conv1D(filters, width, padding="same"),
        layers.Activation("relu"),
        layers.Dropout(0.1),
        layers.Flatten(),
        layers.Dense(classes),
        layers.Activation("softmax"),
    ])
    m.compile(
        optimizer=keras.optimizers.RMSprop(learning_rate=lr, rho=0.9),
        loss="sparse_categorical_crossentropy",
        metrics=["accuracy"],
    )
    return m


def accuracy(model, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    p = model.predict(np.asarray(x, dtype=np.float32)[..., None], verbose=0)
    return float(np.mean(p.argmax(axis=1) == y))


def train_model(x_train, y_train, x_test=None, y_test=None, seed: int = 0, epochs: int = 1000,
                batch_size: int = 16, **arch):
    """Train and report accuracy on both splits."""
    import keras

    keras.utils.set_random_seed(seed)
    model = build_model(input_len=x_train.shape[1], **arch)
    model.fit(np.asarray(x_train, dtype=np.float32)[..., None], y_train,
              epochs=epochs, batch_size=batch_size, verbose=0)
    report = {"train_accuracy": accuracy(model, x_train, y_train)}
    if x_test is not None and len(x_test):
        report["test_accuracy"] = accuracy(model, x_test, y_test)
    log.info("trained: %s", report)
    return model, report
