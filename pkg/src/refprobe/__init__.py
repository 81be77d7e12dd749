"""Truth-conditional probing of messages learned in a referring-expression game.

Modules:

* ``scene``   attribute schemas, worlds, scenes, dataset files
* ``logic``   logical forms: syntax, evaluation, exact equivalence, sampling
* ``net``     GRU encoder / MLP decoder with exact gradients and Adam training
* ``meaning`` meaning tables over sampled worlds and agreement metrics
* ``probe``   theories, alignments, linear operators, PCA
* ``cli``     the end-to-end pipeline
"""

from . import logic, meaning, net, probe, scene
from .errors import RefProbeError
from .logic import And, Atom, Not, Or, equivalent, evaluate, parse, print_form
from .meaning import Agreement, MeaningTable, WorldSample, agreement, make_sample, table_of_form, table_of_message
from .net import ModelConfig, decode, decode_world, encode, load_checkpoint, save_checkpoint, train
from .probe import LinearOperator, fit_binary_operator, fit_unary_operator, pca_project
from .scene import DEFAULT_SCHEMA, AnnotatedScene, AttributeSchema, Object, Scene, World

__version__ = "0.1.0"
