"""
Training events.

``epoch_completed`` is sent after every epoch with ``stage``, ``seed`` and
``record`` (an EpochRecord). ``stage_completed`` is sent once per stage with
``stage``, ``seed``, ``log`` and ``audit``, the effective mechanism settings
the stage trained with.
"""

from django.dispatch import Signal

epoch_completed = Signal()
stage_completed = Signal()
