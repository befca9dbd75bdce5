from .bypass import BypassConfig, BypassParams, agreement, bypass_layers, train_pba
from .core import (AttackConfig, AttackOutcome, Budget, apply_delta, project, within_budget)
from .gradient import bpda_attack, bpda_model, mt_pgd, mt_target, pgd, random_start
from .harness import (TransferResult, brute_force_keys, pba_attack, run_attack,
                      transfer_attack)
from .square import p_selection, square_attack
