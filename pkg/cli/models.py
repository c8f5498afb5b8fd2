from django.db import models
from django.utils import timezone
import uuid
import logging

logger = logging.getLogger(__name__)


class ExperimentRun(models.Model):
    STATUS_CHOICES = [
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    run_id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    subcommand = models.CharField(max_length=32, db_index=True)
    experiment = models.CharField(max_length=32, blank=True, default='')
    config = models.JSONField(default=dict, blank=True)
    seed = models.BigIntegerField(null=True, blank=True)
    threads = models.PositiveIntegerField(default=1)
    status = models.CharField(
        max_length=20,
        choices=STATUS_CHOICES,
        default='running',
        db_index=True
    )
    start_time = models.DateTimeField(default=timezone.now, db_index=True)
    end_time = models.DateTimeField(null=True, blank=True)
    duration = models.DurationField(null=True, blank=True)
    output_path = models.CharField(max_length=500, blank=True, default='')
    summary = models.JSONField(default=dict, blank=True)
    error = models.TextField(blank=True, null=True)
    exit_code = models.SmallIntegerField(default=0)

    def __str__(self):
        return f"{self.subcommand} - {self.run_id} ({self.status})"

    class Meta:
        verbose_name = 'Experiment Run'
        verbose_name_plural = 'Experiment Runs'
        ordering = ['-start_time']
        db_table = 'experiment_run'

    def finish(self, summary=None, output_path=None):
        self.status = 'completed'
        self.end_time = timezone.now()
        if summary is not None:
            self.summary = summary
        if output_path is not None:
            self.output_path = str(output_path)
        self.save()

    def fail(self, error, exit_code):
        self.status = 'failed'
        self.end_time = timezone.now()
        self.error = str(error)
        self.exit_code = exit_code
        self.save()
        logger.error(f"Run {self.run_id} failed with exit code {exit_code}: {error}")

    def save(self, *args, **kwargs):
        if self.end_time and self.start_time:
            self.duration = self.end_time - self.start_time
        super().save(*args, **kwargs)
